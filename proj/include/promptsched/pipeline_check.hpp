#pragma once

// Finite-difference check of the whole path: scheduling, composition, gated
// fusion, encoder, per-task heads and the weighted multi-task loss, with
// respect to every parameter at once.

#include <string>
#include <vector>

#include "promptsched/grad_check.hpp"
#include "promptsched/loss_weights.hpp"
#include "promptsched/model.hpp"

namespace promptsched {

struct PipelineCheck {
  ad::GradCheckResult result;
  std::vector<std::string> leaf_names;
};

inline PipelineCheck pipeline_grad_check(std::uint64_t seed = 0, double epsilon = 1e-5) {
  const EncoderConfig enc{.vocab_size = 10, .d = 8, .n_layers = 1, .n_heads = 2, .ffn_mult = 2, .max_len = 12, .m = 2};
  const std::vector<std::size_t> classes{2, 3};
  auto model = init_model(enc, 3, 0.9, classes, seed);
  // Move Z and W_g off their symmetric zero initialization.
  Rng rng(seed, "pipeline-check");
  for (const auto& name : {names::logits, names::gate})
    for (auto& v : model.params.get(name).values) v = rng.normal(0.0, 0.5);

  std::vector<Batch> batches(classes.size());
  for (std::size_t t = 0; t < classes.size(); ++t)
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<std::size_t> seq(5);
      for (auto& s : seq) s = rng.below(enc.vocab_size);
      batches[t].tokens.push_back(seq);
      batches[t].labels.push_back(rng.below(classes[t]));
    }
  const LossWeights weights{{1.25, 0.75}, LambdaStrategy::Fixed};

  PipelineCheck out;
  std::vector<Tensor> leaves;
  for (const auto& [name, t] : model.params.items()) {
    out.leaf_names.push_back(name);
    leaves.push_back(t);
  }
  out.result = ad::grad_check(
      [&](ad::Tape& tape, std::span<const ad::Var> x) {
        ForwardContext ctx(tape, model);
        for (std::size_t i = 0; i < x.size(); ++i) ctx.bind(out.leaf_names[i], x[i]);
        std::vector<ad::Var> losses;
        for (std::size_t t = 0; t < classes.size(); ++t) losses.push_back(task_loss(ctx, batches[t], t));
        return aggregate_loss(losses, weights);
      },
      std::move(leaves), epsilon);
  return out;
}

}  // namespace promptsched
