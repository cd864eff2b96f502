#pragma once

// Micro transformer encoder-classifier.
//
// Input layout per example: the m fused prompt slots occupy the first m
// positions, followed by the token embeddings. Fixed sinusoidal position
// encodings are added, then n_layers post-norm blocks
//   x = LN(x + MHA(x));  x = LN(x + W2 relu(W1 x + b1) + b2)
// run over the sequence. The pooled vector is the mean over positions and a
// per-task linear head maps it to class logits.

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "promptsched/autodiff.hpp"
#include "promptsched/fusion.hpp"
#include "promptsched/params.hpp"
#include "promptsched/random.hpp"
#include "promptsched/scheduler.hpp"

namespace promptsched {

struct EncoderConfig {
  std::size_t vocab_size = 64;
  std::size_t d = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_mult = 2;
  std::size_t max_len = 40;
  std::size_t m = 4;
  /// Mean-pool over prompt slots as well as tokens.
  bool pool_prompt_positions = true;
  bool position_encoding = true;

  void validate() const {
    if (vocab_size == 0 || d == 0 || n_heads == 0 || ffn_mult == 0 || max_len == 0 || m == 0)
      throw Error("encoder: vocab_size, d, n_heads, ffn_mult, max_len and m must be positive");
    if (d % n_heads != 0)
      throw Error("encoder: d=" + std::to_string(d) + " is not divisible by n_heads=" + std::to_string(n_heads));
    if (m >= max_len) throw Error("encoder: max_len must exceed the prompt slot count m");
  }
};

/// Switches that pin parts of the prompt path to constants.
struct PromptPins {
  /// w_t is the constant one-hot vector e_{t mod K}; Z is unused.
  bool onehot_schedule = false;
  /// g is the constant all-ones vector, so the fused prompt equals the
  /// composed prompt.
  bool gate_open = false;
};

struct ModelState {
  EncoderConfig encoder;
  std::size_t K = 1;
  double tau = 1.0;
  std::vector<std::size_t> classes;  // C_t per task
  PromptPins pins;
  ParameterStore params;

  std::size_t T() const { return classes.size(); }
};

namespace names {
inline const std::string logits = "scheduler.logits";
inline const std::string pool = "prompt.pool";
inline const std::string embeddings = "fusion.embeddings";
inline const std::string gate = "fusion.gate";
inline const std::string token_embedding = "encoder.embedding";
inline std::string head(std::size_t t) { return "head." + std::to_string(t); }
inline std::string layer(std::size_t l, const std::string& leaf) { return "encoder.layer" + std::to_string(l) + "." + leaf; }
inline std::string attn(std::size_t l, std::size_t h, const std::string& w) {
  return layer(l, "head" + std::to_string(h) + "." + w);
}
inline bool is_backbone(const std::string& name) { return name.rfind("encoder.", 0) == 0; }
}  // namespace names

namespace detail {
inline Tensor normal_tensor(Shape shape, double sd, std::uint64_t seed, const std::string& stream) {
  Tensor t = Tensor::zeros(std::move(shape));
  Rng rng(seed, stream);
  for (auto& v : t.values) v = rng.normal(0.0, sd);
  return t;
}
}  // namespace detail

inline Tensor init_head(std::size_t d, std::size_t classes, std::uint64_t seed, const std::string& stream) {
  return detail::normal_tensor({d, classes}, 1.0 / std::sqrt(static_cast<double>(d)), seed, stream);
}

/// Every parameter draws from its own named stream, so the backbone is the
/// same for a given seed regardless of T or K.
inline ModelState init_model(const EncoderConfig& cfg, std::size_t K, double tau, std::vector<std::size_t> classes,
                             std::uint64_t seed, PromptPins pins = {}) {
  cfg.validate();
  if (classes.empty()) throw Error("init_model: at least one task required");
  for (auto c : classes)
    if (c < 2) throw Error("init_model: every task needs at least 2 classes");
  ModelState s{cfg, K, tau, std::move(classes), pins, {}};
  const std::size_t T = s.T();
  const std::size_t d = cfg.d;
  auto [pool, sched] = init_scheduler(T, K, d, seed, cfg.m, tau);
  s.params.add(names::logits, std::move(sched.logits));
  s.params.add(names::pool, std::move(pool.prompts));
  auto table = init_task_embeddings(T, d, seed);
  s.params.add(names::embeddings, std::move(table.embeddings));
  s.params.add(names::gate, std::move(table.gate_matrix));

  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  s.params.add(names::token_embedding, detail::normal_tensor({cfg.vocab_size, d}, sd, seed, names::token_embedding));
  const std::size_t dh = d / cfg.n_heads;
  const std::size_t f = d * cfg.ffn_mult;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      for (const char* w : {"wq", "wk", "wv"})
        s.params.add(names::attn(l, h, w), detail::normal_tensor({d, dh}, sd, seed, names::attn(l, h, w)));
      s.params.add(names::attn(l, h, "wo"),
                   detail::normal_tensor({dh, d}, 1.0 / std::sqrt(static_cast<double>(d)), seed, names::attn(l, h, "wo")));
    }
    for (const char* ln : {"ln1", "ln2"}) {
      s.params.add(names::layer(l, std::string(ln) + ".gain"), Tensor::filled({d}, 1.0));
      s.params.add(names::layer(l, std::string(ln) + ".bias"), Tensor::zeros({d}));
    }
    s.params.add(names::layer(l, "ffn.w1"), detail::normal_tensor({d, f}, sd, seed, names::layer(l, "ffn.w1")));
    s.params.add(names::layer(l, "ffn.b1"), Tensor::zeros({f}));
    s.params.add(names::layer(l, "ffn.w2"),
                 detail::normal_tensor({f, d}, 1.0 / std::sqrt(static_cast<double>(f)), seed, names::layer(l, "ffn.w2")));
    s.params.add(names::layer(l, "ffn.b2"), Tensor::zeros({d}));
  }
  for (std::size_t t = 0; t < T; ++t) s.params.add(names::head(t), init_head(d, s.classes[t], seed, names::head(t)));
  return s;
}

/// Sinusoidal encodings scaled by 1/sqrt(d) so they are commensurate with
/// the token and prompt embeddings.
inline double position_encoding(std::size_t pos, std::size_t i, std::size_t d) {
  const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
  const double angle = static_cast<double>(pos) * rate;
  return (i % 2 == 0 ? std::sin(angle) : std::cos(angle)) / std::sqrt(static_cast<double>(d));
}

struct Batch {
  std::vector<std::vector<std::size_t>> tokens;
  std::vector<std::size_t> labels;
  std::size_t size() const { return tokens.size(); }
};

/// Binds model parameters to leaves of one tape. Each parameter becomes a
/// leaf on first use; `trainable` decides whether it receives a gradient.
class ForwardContext {
 public:
  using TrainablePredicate = std::function<bool(const std::string&)>;

  ForwardContext(ad::Tape& tape, const ModelState& model, TrainablePredicate trainable = {})
      : tape_(tape), model_(model), trainable_(std::move(trainable)) {}

  ad::Tape& tape() { return tape_; }
  const ModelState& model() const { return model_; }

  ad::Var param(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    const bool grad = !trainable_ || trainable_(name);
    auto v = tape_.leaf(model_.params.get(name), grad);
    leaves_.emplace(name, v);
    return v;
  }

  /// Uses an existing variable in place of the stored parameter value.
  void bind(const std::string& name, ad::Var v) {
    if (v.shape() != model_.params.get(name).shape)
      throw Error("bind: shape " + shape_str(v.shape()) + " does not match parameter " + name);
    leaves_.insert_or_assign(name, v);
  }

  const std::map<std::string, ad::Var>& leaves() const { return leaves_; }

  /// Gradients of every trainable leaf that reached the loss.
  GradMap gradients() const {
    GradMap out;
    for (const auto& [name, v] : leaves_)
      if (v.grad()) out.emplace(name, *v.grad());
    return out;
  }

 private:
  ad::Tape& tape_;
  const ModelState& model_;
  TrainablePredicate trainable_;
  std::map<std::string, ad::Var> leaves_;
};

/// Scheduling weights w_t (constant one-hot when pinned).
inline ad::Var task_weights(ForwardContext& ctx, std::size_t t) {
  const auto& model = ctx.model();
  if (model.pins.onehot_schedule) {
    Tensor w = Tensor::zeros({model.K});
    w.values[t % model.K] = 1.0;
    return ctx.tape().constant(std::move(w));
  }
  return schedule_weights(ctx.param(names::logits), t, model.tau);
}

/// Fused prompt for task t: softmax scheduling, pool composition, gated fusion.
inline ad::Var fused_prompt(ForwardContext& ctx, std::size_t t) {
  const auto& model = ctx.model();
  if (t >= model.T()) throw Error("fused_prompt: task " + std::to_string(t) + " out of range");
  const auto& cfg = model.encoder;
  auto w = task_weights(ctx, t);
  auto composed = compose_prompt(w, ctx.param(names::pool), cfg.m, cfg.d);
  auto e = ad::row(ctx.param(names::embeddings), t);
  ad::Var g = model.pins.gate_open ? ctx.tape().constant(Tensor::filled({cfg.d}, 1.0))
                                   : gate_vector(e, ctx.param(names::gate));
  return fuse(g, composed, e);
}

namespace detail {
inline ad::Var affine_norm(ForwardContext& ctx, ad::Var x, std::size_t l, const std::string& which) {
  auto y = ad::layer_norm(x);
  y = ad::mul(y, ctx.param(names::layer(l, which + ".gain")));
  return ad::add(y, ctx.param(names::layer(l, which + ".bias")));
}
}  // namespace detail

/// Encodes a batch of token sequences behind the same fused prompt [m, d].
/// Returns pooled vectors [B, d].
inline ad::Var encode(ForwardContext& ctx, const std::vector<std::vector<std::size_t>>& tokens, ad::Var fused) {
  const auto& cfg = ctx.model().encoder;
  auto& tape = ctx.tape();
  if (tokens.empty()) throw Error("encode: empty batch");
  if (fused.value().shape != Shape{cfg.m, cfg.d})
    throw Error("encode: fused prompt shape " + shape_str(fused.shape()) + " does not match [m, d]");

  std::vector<std::size_t> flat;
  std::vector<std::size_t> offsets{0};  // row offsets of each example in the stacked input
  for (const auto& seq : tokens) {
    if (seq.empty()) throw Error("encode: empty token sequence");
    if (seq.size() + cfg.m > cfg.max_len)
      throw Error("encode: sequence of " + std::to_string(seq.size()) + " tokens plus " + std::to_string(cfg.m) +
                  " prompt slots exceeds max_len " + std::to_string(cfg.max_len));
    for (auto id : seq) {
      if (id >= cfg.vocab_size)
        throw Error("encode: token id " + std::to_string(id) + " out of vocabulary of " + std::to_string(cfg.vocab_size));
      flat.push_back(id);
    }
    offsets.push_back(offsets.back() + cfg.m + seq.size());
  }
  const std::size_t B = tokens.size();
  const std::size_t N = offsets.back();
  const std::size_t d = cfg.d;

  auto emb = ad::gather_rows(ctx.param(names::token_embedding), flat);
  std::vector<ad::Var> blocks;
  std::size_t tok_off = 0;
  for (std::size_t b = 0; b < B; ++b) {
    blocks.push_back(fused);
    blocks.push_back(ad::slice_rows(emb, tok_off, tokens[b].size()));
    tok_off += tokens[b].size();
  }
  auto x = ad::concat_rows(blocks);
  if (cfg.position_encoding) {
    Tensor pe = Tensor::zeros({N, d});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t pos = 0; pos < offsets[b + 1] - offsets[b]; ++pos)
        for (std::size_t i = 0; i < d; ++i) pe.at(offsets[b] + pos, i) = position_encoding(pos, i, d);
    x = ad::add(x, tape.constant(std::move(pe)));
  }

  const std::size_t dh = d / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    ad::Var attn{};
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      auto q = ad::matmul(x, ctx.param(names::attn(l, h, "wq")));
      auto k = ad::matmul(x, ctx.param(names::attn(l, h, "wk")));
      auto v = ad::matmul(x, ctx.param(names::attn(l, h, "wv")));
      std::vector<ad::Var> outs;
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t off = offsets[b], len = offsets[b + 1] - offsets[b];
        auto qb = ad::slice_rows(q, off, len);
        auto kb = ad::slice_rows(k, off, len);
        auto vb = ad::slice_rows(v, off, len);
        auto scores = ad::scale_shift(ad::matmul(qb, ad::transpose(kb)), scale);
        outs.push_back(ad::matmul(ad::softmax_temp(scores, 1.0), vb));
      }
      auto head_out = ad::matmul(B == 1 ? outs[0] : ad::concat_rows(outs), ctx.param(names::attn(l, h, "wo")));
      attn = h == 0 ? head_out : ad::add(attn, head_out);
    }
    x = detail::affine_norm(ctx, ad::add(x, attn), l, "ln1");
    auto hidden = ad::relu(ad::add(ad::matmul(x, ctx.param(names::layer(l, "ffn.w1"))), ctx.param(names::layer(l, "ffn.b1"))));
    auto ffn = ad::add(ad::matmul(hidden, ctx.param(names::layer(l, "ffn.w2"))), ctx.param(names::layer(l, "ffn.b2")));
    x = detail::affine_norm(ctx, ad::add(x, ffn), l, "ln2");
  }

  bool uniform = true;
  for (const auto& seq : tokens) uniform = uniform && seq.size() == tokens[0].size();
  if (cfg.pool_prompt_positions && uniform) return ad::mean_pool(x, offsets[1]);
  std::vector<ad::Var> pooled;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t skip = cfg.pool_prompt_positions ? 0 : cfg.m;
    const std::size_t len = offsets[b + 1] - offsets[b] - skip;
    pooled.push_back(ad::mean_pool(ad::slice_rows(x, offsets[b] + skip, len), len));
  }
  return B == 1 ? pooled[0] : ad::concat_rows(pooled);
}

/// Class logits [B, C] = pooled [B, d] x head [d, C].
inline ad::Var predict(ad::Var pooled, ad::Var head) {
  const auto& p = pooled.value();
  const auto& h = head.value();
  if (h.rank() != 2 || p.cols() != h.shape[0])
    throw Error("predict: pooled " + shape_str(p.shape) + " does not match head " + shape_str(h.shape));
  return ad::matmul(pooled, head);
}

/// Mean cross-entropy of task t's head on the batch, through the full
/// scheduling, composition, fusion and encoder path.
inline ad::Var task_loss(ForwardContext& ctx, const Batch& batch, std::size_t t) {
  const auto& model = ctx.model();
  if (batch.size() == 0) throw Error("task_loss: empty batch");
  if (batch.labels.size() != batch.size()) throw Error("task_loss: label count does not match batch size");
  if (t >= model.T()) throw Error("task_loss: task " + std::to_string(t) + " out of range");
  for (auto y : batch.labels)
    if (y >= model.classes[t])
      throw Error("task_loss: label " + std::to_string(y) + " out of range for task " + std::to_string(t) + " with " +
                  std::to_string(model.classes[t]) + " classes");
  auto pooled = encode(ctx, batch.tokens, fused_prompt(ctx, t));
  auto logits = predict(pooled, ctx.param(names::head(t)));
  return ad::cross_entropy(logits, batch.labels);
}

/// Class predictions for task t (no gradients recorded).
inline std::vector<std::size_t> predict_classes(const ModelState& model, const std::vector<std::vector<std::size_t>>& tokens,
                                                std::size_t t) {
  ad::Tape tape;
  ForwardContext ctx(tape, model, [](const std::string&) { return false; });
  auto logits = predict(encode(ctx, tokens, fused_prompt(ctx, t)), ctx.param(names::head(t))).value();
  std::vector<std::size_t> out;
  const std::size_t C = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (logits.values[r * C + c] > logits.values[r * C + best]) best = c;
    out.push_back(best);
  }
  return out;
}

}  // namespace promptsched
