#pragma once

// Multi-task training loop, evaluation and held-out transfer.
//
// One step: every task draws a batch from its own stream and is evaluated on
// its own tape; the L2 norm of each task's prompt-pool gradient feeds the
// lambda update; the lambda-weighted sum of task gradients, accumulated in
// task order, drives one optimizer step.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "promptsched/loss_weights.hpp"
#include "promptsched/model.hpp"
#include "promptsched/tasks.hpp"

namespace promptsched {

struct TrainConfig {
  EncoderConfig encoder{.vocab_size = 16, .d = 16, .n_layers = 1, .n_heads = 2, .ffn_mult = 2, .max_len = 16, .m = 4};
  std::size_t K = 4;
  double tau = 0.9;
  std::size_t steps = 300;
  std::size_t batch_size = 16;
  OptimizerConfig optimizer = [] {
    OptimizerConfig o;
    o.learning_rate = 1e-2;
    return o;
  }();
  /// Learning-rate multiplier for the scheduler logits.
  double scheduler_lr_scale = 10.0;
  LambdaStrategy lambda_strategy = LambdaStrategy::GradNorm;
  LambdaUpdateConfig lambda_update;
  std::uint64_t seed = 0;
  bool freeze_backbone = false;
  PromptPins pins;
  /// Gate snapshot interval in steps; 0 records only the initial and final state.
  std::size_t eval_every = 0;
  /// Held-out adaptation budget.
  std::size_t adapt_steps = 200;

  void validate() const {
    encoder.validate();
    check_temperature(tau);
    if (K == 0) throw Error("train: K must be positive");
    if (batch_size == 0) throw Error("train: batch_size must be positive");
    if (!(optimizer.learning_rate > 0.0) || !std::isfinite(optimizer.learning_rate))
      throw Error("train: learning_rate must be positive");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
      throw Error("train: adam betas must lie in [0, 1)");
    if (!(optimizer.epsilon > 0.0)) throw Error("train: adam epsilon must be positive");
    if (!(lambda_update.epsilon_floor > 0.0)) throw Error("train: lambda epsilon_floor must be positive");
    if (!(lambda_update.smoothing >= 0.0 && lambda_update.smoothing < 1.0))
      throw Error("train: lambda smoothing must lie in [0, 1)");
    if (!(scheduler_lr_scale > 0.0) || !std::isfinite(scheduler_lr_scale))
      throw Error("train: scheduler_lr_scale must be positive");
    if (adapt_steps == 0) throw Error("train: adapt_steps must be positive");
  }
};

struct TaskMetrics {
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double mean_gate = 0.0;
  double entropy = 0.0;
  double lambda = 1.0;
};

struct GateSnapshot {
  std::size_t step = 0;
  std::vector<double> mean_gate;  // per task
  std::vector<double> entropy;    // per task
};

struct MetricsReport {
  std::vector<TaskMetrics> tasks;
  double macro_val = 0.0;
  double macro_test = 0.0;
  /// Per step, per task loss on the step's batch, before the update.
  std::vector<std::vector<double>> loss_trace;
  /// Per step, mean scheduling entropy over tasks, before the update.
  std::vector<double> entropy_trace;
  /// Per step, lambdas used for the update.
  std::vector<std::vector<double>> lambda_trace;
  std::vector<GateSnapshot> gates;
  /// NaN until computed; NaN also marks an undefined ratio.
  double transfer_gain = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;

  /// Mean over tasks of the final scheduling entropy.
  double mean_entropy() const {
    double s = 0.0;
    for (const auto& t : tasks) s += t.entropy;
    return tasks.empty() ? 0.0 : s / static_cast<double>(tasks.size());
  }
};

struct TrainResult {
  ModelState model;
  MetricsReport report;
  LossWeights weights;
};

/// Training produced a non-finite loss or gradient. Carries the traces up to
/// the last finite step.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, MetricsReport partial)
      : Error("train: diverged at step " + std::to_string(step)), step_(step), partial_(std::move(partial)) {}
  std::size_t step() const { return step_; }
  const MetricsReport& partial() const { return partial_; }

 private:
  std::size_t step_;
  MetricsReport partial_;
};

using TrainablePredicate = ForwardContext::TrainablePredicate;

/// Accuracy of task t on a split, evaluated in fixed-size chunks.
inline double accuracy(const ModelState& model, const std::vector<Example>& split, std::size_t t) {
  if (split.empty()) throw Error("accuracy: empty split");
  constexpr std::size_t chunk = 64;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < split.size(); b += chunk) {
    std::vector<std::vector<std::size_t>> tokens;
    const std::size_t e = std::min(split.size(), b + chunk);
    for (std::size_t i = b; i < e; ++i) tokens.push_back(split[i].tokens);
    auto pred = predict_classes(model, tokens, t);
    for (std::size_t i = b; i < e; ++i) correct += pred[i - b] == split[i].label;
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

inline SchedulerState scheduler_view(const ModelState& model) {
  return SchedulerState{model.params.get(names::logits), model.tau};
}

/// Scheduling entropy of task t (0 when the schedule is pinned one-hot).
inline double task_entropy(const ModelState& model, std::size_t t) {
  if (model.pins.onehot_schedule) return 0.0;
  return scheduling_entropy(schedule_weights(scheduler_view(model), t));
}

inline double task_mean_gate(const ModelState& model, std::size_t t) {
  if (model.pins.gate_open) return 1.0;
  TaskEmbeddingTable table{model.params.get(names::embeddings), model.params.get(names::gate)};
  return mean_gate(table, t);
}

inline GateSnapshot gate_snapshot(const ModelState& model, std::size_t step) {
  GateSnapshot g{step, {}, {}};
  for (std::size_t t = 0; t < model.T(); ++t) {
    g.mean_gate.push_back(task_mean_gate(model, t));
    g.entropy.push_back(task_entropy(model, t));
  }
  return g;
}

namespace detail {

inline void check_compatible(const ModelState& model, const TaskSuite& suite) {
  if (model.classes != suite.classes()) throw Error("train: initial model does not match the suite's tasks");
  if (model.encoder.vocab_size < suite.config.vocab_size)
    throw Error("train: encoder vocab_size " + std::to_string(model.encoder.vocab_size) + " is smaller than the suite's " +
                std::to_string(suite.config.vocab_size));
  if (model.encoder.max_len < model.encoder.m + suite.config.seq_len)
    throw Error("train: encoder max_len " + std::to_string(model.encoder.max_len) + " cannot hold " +
                std::to_string(model.encoder.m) + " prompt slots plus " + std::to_string(suite.config.seq_len) + " tokens");
}

inline Batch sample_batch(Rng& rng, const Task& task, std::size_t n) {
  Batch b;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = task.train[rng.below(task.train.size())];
    b.tokens.push_back(ex.tokens);
    b.labels.push_back(ex.label);
  }
  return b;
}

inline double l2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double mean_entropy(const ModelState& model) {
  double s = 0.0;
  for (std::size_t t = 0; t < model.T(); ++t) s += task_entropy(model, t);
  return s / static_cast<double>(model.T());
}

inline void evaluate(const ModelState& model, const TaskSuite& suite, const LossWeights& weights, MetricsReport& r) {
  r.tasks.clear();
  r.macro_val = r.macro_test = 0.0;
  for (std::size_t t = 0; t < suite.T(); ++t) {
    TaskMetrics m;
    m.val_accuracy = accuracy(model, suite.tasks[t].val, t);
    m.test_accuracy = accuracy(model, suite.tasks[t].test, t);
    m.mean_gate = task_mean_gate(model, t);
    m.entropy = task_entropy(model, t);
    m.lambda = weights.lambdas[t];
    r.macro_val += m.val_accuracy / static_cast<double>(suite.T());
    r.macro_test += m.test_accuracy / static_cast<double>(suite.T());
    r.tasks.push_back(m);
  }
}

}  // namespace detail

/// Trains on `suite`. Starts from `initial` when given, otherwise from a
/// fresh model seeded by `cfg.seed`. `trainable` overrides which parameters
/// receive updates; by default everything except a frozen backbone.
inline TrainResult train(const TrainConfig& cfg, const TaskSuite& suite, std::optional<ModelState> initial = std::nullopt,
                         TrainablePredicate trainable = {}) {
  cfg.validate();
  if (suite.T() == 0) throw Error("train: empty task suite");
  const auto start = std::chrono::steady_clock::now();

  ModelState model = initial ? std::move(*initial)
                             : init_model(cfg.encoder, cfg.K, cfg.tau, suite.classes(), cfg.seed, cfg.pins);
  detail::check_compatible(model, suite);
  if (!trainable) {
    const bool freeze = cfg.freeze_backbone;
    trainable = [freeze](const std::string& name) { return !(freeze && names::is_backbone(name)); };
  }

  const std::size_t T = suite.T();
  LossWeights weights = LossWeights::uniform(T, cfg.lambda_strategy);
  OptimizerConfig ocfg = cfg.optimizer;
  ocfg.lr_scale[names::logits] = cfg.scheduler_lr_scale;
  Optimizer opt(ocfg);
  std::vector<Rng> streams;
  for (const auto& task : suite.tasks) streams.emplace_back(task.stream_seed, "batches");

  MetricsReport report;
  report.gates.push_back(gate_snapshot(model, 0));

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<double> losses(T), norms(T);
    std::vector<GradMap> grads(T);
    const double entropy = detail::mean_entropy(model);
    try {
      for (std::size_t t = 0; t < T; ++t) {
        auto batch = detail::sample_batch(streams[t], suite.tasks[t], cfg.batch_size);
        ad::Tape tape;
        ForwardContext ctx(tape, model, trainable);
        auto loss = task_loss(ctx, batch, t);
        tape.backward(loss);
        losses[t] = loss.item();
        grads[t] = ctx.gradients();
        auto pool = grads[t].find(names::pool);
        norms[t] = pool == grads[t].end() ? 0.0 : detail::l2(pool->second);
        for (const auto& [_, g] : grads[t])
          if (!all_finite(g)) throw NonFiniteError("non-finite gradient");
      }
    } catch (const NonFiniteError&) {
      report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      throw DivergenceError(step, std::move(report));
    }

    weights = update_lambdas(norms, losses, weights, cfg.lambda_update);
    GradMap total;
    for (std::size_t t = 0; t < T; ++t)
      for (const auto& [name, g] : grads[t]) {
        auto& acc = total[name];
        if (acc.empty()) acc.assign(g.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += weights.lambdas[t] * g[i];
      }
    opt.step(model.params, total);
    for (const auto& [name, p] : model.params.items())
      if (!all_finite(p.values)) {
        report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        throw DivergenceError(step, std::move(report));
      }

    report.loss_trace.push_back(std::move(losses));
    report.entropy_trace.push_back(entropy);
    report.lambda_trace.push_back(weights.lambdas);
    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 < cfg.steps)
      report.gates.push_back(gate_snapshot(model, step + 1));
  }
  if (cfg.steps > 0) report.gates.push_back(gate_snapshot(model, cfg.steps));

  detail::evaluate(model, suite, weights, report);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return TrainResult{std::move(model), std::move(report), std::move(weights)};
}

/// Adapts a trained model to one unseen task: a new scheduling row, task
/// embedding and head are trained for `cfg.adapt_steps` steps while the pool,
/// gate and encoder stay fixed. Returns the task's test accuracy.
inline double adapt_heldout(const ModelState& trained, const Task& task, const TrainConfig& cfg) {
  const std::size_t d = trained.encoder.d;
  ModelState m{trained.encoder, trained.K, trained.tau, {task.classes}, trained.pins, {}};
  for (const auto& [name, p] : trained.params.items())
    if (name == names::pool || name == names::gate || names::is_backbone(name)) m.params.add(name, p);
  // The new scheduling row starts at the mean of the trained rows.
  const auto& Z = trained.params.get(names::logits);
  Tensor z = Tensor::zeros({1, trained.K});
  for (std::size_t t = 0; t < Z.rows(); ++t)
    for (std::size_t k = 0; k < trained.K; ++k) z.values[k] += Z.at(t, k) / static_cast<double>(Z.rows());
  m.params.add(names::logits, std::move(z));
  const std::uint64_t seed = mix_seed(cfg.seed, task.stream_seed);
  m.params.add(names::embeddings, detail::normal_tensor({1, d}, 1.0 / std::sqrt(static_cast<double>(d)), seed, "heldout.embedding"));
  m.params.add(names::head(0), init_head(d, task.classes, seed, "heldout.head"));

  TrainConfig acfg = cfg;
  acfg.steps = cfg.adapt_steps;
  acfg.lambda_strategy = LambdaStrategy::Fixed;
  acfg.pins = trained.pins;
  TaskSuite one{{task}, {}};
  one.config.vocab_size = trained.encoder.vocab_size;
  one.config.seq_len = task.train.front().tokens.size();
  one.config.T = 1;
  auto trainable = [](const std::string& name) {
    return name == names::logits || name == names::embeddings || name == names::head(0);
  };
  auto r = train(acfg, one, std::move(m), trainable);
  return r.report.tasks[0].test_accuracy;
}

struct TransferReport {
  std::vector<double> scheduled;  // per held-out task test accuracy
  std::vector<double> baseline;
  /// mean(scheduled) / mean(baseline); NaN when the baseline mean is 0.
  double gain = std::numeric_limits<double>::quiet_NaN();
  bool defined() const { return std::isfinite(gain); }
};

inline double gain_ratio(double scheduled_mean, double baseline_mean) {
  if (!(baseline_mean > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return scheduled_mean / baseline_mean;
}

/// Transfer gain of `state` over `baseline` on held-out tasks, equal budgets.
inline TransferReport transfer_gain(const ModelState& state, const TaskSuite& heldout, const ModelState& baseline,
                                    const TrainConfig& cfg) {
  if (heldout.T() == 0) throw Error("transfer_gain: no held-out tasks");
  TransferReport r;
  double s = 0.0, b = 0.0;
  for (const auto& task : heldout.tasks) {
    r.scheduled.push_back(adapt_heldout(state, task, cfg));
    r.baseline.push_back(adapt_heldout(baseline, task, cfg));
    s += r.scheduled.back();
    b += r.baseline.back();
  }
  r.gain = gain_ratio(s / static_cast<double>(heldout.T()), b / static_cast<double>(heldout.T()));
  return r;
}

}  // namespace promptsched
