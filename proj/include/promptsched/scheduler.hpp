#pragma once

// Prompt pool and task scheduler.
//
// Each task t owns a row z_t of a learnable logit matrix Z (T x K). Its
// scheduling weights are w_t = softmax(z_t / tau), and its composed prompt is
// the convex combination sum_k w_{t,k} p_k of the K pool prompts. A pool
// prompt spans m token slots of width d; the same weight applies to every
// slot, so the pool is stored as a K x (m*d) matrix and composition is a
// single vector-matrix product.

#include <cmath>
#include <ostream>
#include <utility>

#include "promptsched/autodiff.hpp"
#include "promptsched/csv.hpp"
#include "promptsched/random.hpp"

namespace promptsched {

struct PromptPool {
  std::size_t K = 0;
  std::size_t m = 1;
  std::size_t d = 0;
  Tensor prompts;  // [K, m*d]

  /// Prompt k as an [m, d] block.
  Tensor prompt(std::size_t k) const {
    auto r = prompts.row(k);
    return Tensor({m, d}, std::move(r.values));
  }
};

struct SchedulerState {
  Tensor logits;  // [T, K]
  double tau = 1.0;

  std::size_t T() const { return logits.shape[0]; }
  std::size_t K() const { return logits.shape[1]; }
};

struct ComposedPrompt {
  Tensor vector;  // [m, d]
  std::size_t task_id = 0;
};

inline void check_temperature(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw Error("scheduler: temperature must be positive, got " + std::to_string(tau));
}

/// Zero logits (uniform scheduling) and N(0, 1/d) pool prompts.
inline std::pair<PromptPool, SchedulerState> init_scheduler(std::size_t T, std::size_t K, std::size_t d,
                                                            std::uint64_t seed, std::size_t m = 1,
                                                            double tau = 1.0) {
  if (T == 0 || K == 0 || d == 0 || m == 0)
    throw Error("init_scheduler: sizes must be positive (T=" + std::to_string(T) + ", K=" + std::to_string(K) +
                ", d=" + std::to_string(d) + ", m=" + std::to_string(m) + ")");
  check_temperature(tau);
  PromptPool pool{K, m, d, Tensor::zeros({K, m * d})};
  Rng rng(seed, "prompt.pool");
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& v : pool.prompts.values) v = rng.normal(0.0, sd);
  SchedulerState state{Tensor::zeros({T, K}), tau};
  return {std::move(pool), std::move(state)};
}

// -- differentiable forms ---------------------------------------------------

/// w_t = softmax(z_t / tau) taken from row t of the logit matrix.
inline ad::Var schedule_weights(ad::Var logits, std::size_t t, double tau) {
  const auto& Z = logits.value();
  if (Z.rank() != 2) throw Error("schedule_weights: logits must be [T, K], got " + shape_str(Z.shape));
  if (t >= Z.shape[0])
    throw Error("schedule_weights: task " + std::to_string(t) + " out of range for T=" + std::to_string(Z.shape[0]));
  check_temperature(tau);
  return ad::softmax_temp(ad::row(logits, t), tau);
}

/// sum_k w_k p_k over the pool, returned as an [m, d] block.
inline ad::Var compose_prompt(ad::Var weights, ad::Var pool, std::size_t m, std::size_t d) {
  const auto& w = weights.value();
  const auto& P = pool.value();
  if (P.rank() != 2 || P.shape[1] != m * d)
    throw Error("compose_prompt: pool shape " + shape_str(P.shape) + " does not hold " + std::to_string(m) + "x" +
                std::to_string(d) + " prompts");
  if (w.rank() != 1 || w.shape[0] != P.shape[0])
    throw Error("compose_prompt: " + std::to_string(w.size()) + " weights for a pool of " +
                std::to_string(P.shape[0]));
  double s = 0.0;
  for (double x : w.values) s += x;
  if (std::abs(s - 1.0) > 1e-9) throw Error("compose_prompt: weights sum to " + std::to_string(s) + ", not 1");
  return ad::reshape(ad::matmul(weights, pool), {m, d});
}

// -- value forms --------------------------------------------------------------

inline Tensor schedule_weights(const SchedulerState& state, std::size_t t) {
  ad::Tape tape;
  return schedule_weights(tape.constant(state.logits), t, state.tau).value();
}

inline ComposedPrompt compose_prompt(const Tensor& weights, const PromptPool& pool, std::size_t task_id = 0) {
  ad::Tape tape;
  auto v = compose_prompt(tape.constant(weights), tape.constant(pool.prompts), pool.m, pool.d);
  return ComposedPrompt{v.value(), task_id};
}

/// -sum w ln w with 0 ln 0 = 0.
inline double scheduling_entropy(const Tensor& weights) {
  double h = 0.0;
  for (double w : weights.values) {
    if (w < 0.0 || !std::isfinite(w)) throw Error("scheduling_entropy: weight " + std::to_string(w) + " is not a probability");
    if (w > 0.0) h -= w * std::log(w);
  }
  return h;
}

/// T x K weight matrix as CSV: "task,k0,...,k{K-1}".
inline void write_scheduler_csv(std::ostream& os, const SchedulerState& state) {
  std::vector<std::string> header{"task"};
  for (std::size_t k = 0; k < state.K(); ++k) header.push_back("k" + std::to_string(k));
  write_csv_row(os, header);
  for (std::size_t t = 0; t < state.T(); ++t) {
    auto w = schedule_weights(state, t);
    std::vector<std::string> row{std::to_string(t)};
    for (double v : w.values) row.push_back(format_double(v));
    write_csv_row(os, row);
  }
}

}  // namespace promptsched
