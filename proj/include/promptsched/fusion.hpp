#pragma once

// Gated fusion of a composed prompt with a task embedding:
//
//   g = sigmoid(W_g e_t)
//   final_s = g * composed_s + (1 - g) * e_t     for every prompt slot s
//
// The gate has no bias term. e_t is broadcast across the m slots.

#include <cmath>
#include <ostream>

#include "promptsched/autodiff.hpp"
#include "promptsched/csv.hpp"
#include "promptsched/random.hpp"
#include "promptsched/scheduler.hpp"

namespace promptsched {

struct TaskEmbeddingTable {
  Tensor embeddings;   // [T, d]
  Tensor gate_matrix;  // [d, d]

  std::size_t T() const { return embeddings.shape[0]; }
  std::size_t d() const { return embeddings.shape[1]; }
};

struct FusedPrompt {
  Tensor slots;  // [m, d]
  std::size_t task_id = 0;
  Tensor gate_values;  // [d]
};

/// e_t ~ N(0, 1/d), W_g = 0 (the gate starts at exactly 0.5).
inline TaskEmbeddingTable init_task_embeddings(std::size_t T, std::size_t d, std::uint64_t seed) {
  if (T == 0 || d == 0) throw Error("init_task_embeddings: sizes must be positive");
  TaskEmbeddingTable table{Tensor::zeros({T, d}), Tensor::zeros({d, d})};
  Rng rng(seed, "fusion.embeddings");
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& v : table.embeddings.values) v = rng.normal(0.0, sd);
  return table;
}

inline ad::Var gate_vector(ad::Var embedding, ad::Var gate_matrix) {
  const auto& e = embedding.value();
  const auto& W = gate_matrix.value();
  if (e.rank() != 1 || W.rank() != 2 || W.shape[0] != W.shape[1] || W.shape[1] != e.shape[0])
    throw Error("gate_vector: shape mismatch " + shape_str(W.shape) + " vs " + shape_str(e.shape));
  return ad::sigmoid(ad::matmul(gate_matrix, embedding));
}

/// g * composed + (1 - g) * e, with g and e broadcast over the rows of composed.
inline ad::Var fuse(ad::Var gate, ad::Var composed, ad::Var embedding) {
  const auto& g = gate.value();
  const auto& c = composed.value();
  const auto& e = embedding.value();
  if (g.rank() != 1 || e.rank() != 1 || c.rank() != 2 || g.shape[0] != c.shape[1] || e.shape[0] != c.shape[1])
    throw Error("fuse: dimension mismatch gate " + shape_str(g.shape) + ", composed " + shape_str(c.shape) +
                ", embedding " + shape_str(e.shape));
  auto keep = ad::mul(composed, gate);
  auto rest = ad::mul(ad::scale_shift(gate, -1.0, 1.0), embedding);
  return ad::add(keep, rest);
}

inline Tensor gate_vector(const Tensor& embedding, const Tensor& gate_matrix) {
  ad::Tape tape;
  return gate_vector(tape.constant(embedding), tape.constant(gate_matrix)).value();
}

inline FusedPrompt fuse(const Tensor& gate, const ComposedPrompt& composed, const Tensor& embedding) {
  ad::Tape tape;
  auto out = fuse(tape.constant(gate), tape.constant(composed.vector), tape.constant(embedding));
  return FusedPrompt{out.value(), composed.task_id, gate};
}

/// Fraction of gate pre-activations W_g e_t with magnitude above 10.
inline double gate_saturation(const Tensor& embedding, const Tensor& gate_matrix) {
  ad::Tape tape;
  const auto pre = ad::matmul(tape.constant(gate_matrix), tape.constant(embedding)).value();
  std::size_t n = 0;
  for (double v : pre.values) n += std::abs(v) > 10.0;
  return static_cast<double>(n) / static_cast<double>(pre.size());
}

inline double mean_gate(const TaskEmbeddingTable& table, std::size_t t) {
  auto g = gate_vector(table.embeddings.row(t), table.gate_matrix);
  double s = 0.0;
  for (double v : g.values) s += v;
  return s / static_cast<double>(g.size());
}

/// Gate diagnostics for one evaluation: "task,mean_gate,entropy_of_weights".
inline void write_gate_rows(std::ostream& os, const TaskEmbeddingTable& table, const SchedulerState& sched,
                            bool header) {
  if (header) write_csv_row(os, {"task", "mean_gate", "entropy_of_weights"});
  for (std::size_t t = 0; t < table.T(); ++t)
    write_csv_row(os, {std::to_string(t), format_double(mean_gate(table, t)),
                       format_double(scheduling_entropy(schedule_weights(sched, t)))});
}

}  // namespace promptsched
