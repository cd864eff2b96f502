#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "promptsched/autodiff.hpp"

namespace promptsched::ad {

/// A scalar tensor program: builds its output on `tape` from the given
/// leaf variables (in the order the leaves were passed to grad_check).
using TensorProgram = std::function<Var(Tape& tape, std::span<const Var> leaves)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace detail {
inline Var run_program(const TensorProgram& f, Tape& tape, std::span<const Tensor> leaves) {
  std::vector<Var> vars;
  vars.reserve(leaves.size());
  for (const auto& l : leaves) vars.push_back(tape.leaf(l));
  Var out = f(tape, vars);
  if (out.size() != 1) throw Error("grad_check: program output must be scalar, got " + shape_str(out.shape()));
  return out;
}
}  // namespace detail

/// Compares reverse-mode gradients with central differences
/// (f(x+eps) - f(x-eps)) / 2eps on every coordinate of every leaf.
inline GradCheckResult grad_check(const TensorProgram& f, std::vector<Tensor> leaves, double epsilon = 1e-5) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
    throw Error("grad_check: epsilon must lie in [1e-7, 1e-3], got " + std::to_string(epsilon));

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Var out = detail::run_program(f, tape, leaves);
    tape.backward(out);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      const auto& g = tape.node(i).out.grad;
      analytic.push_back(g ? *g : std::vector<double>(leaves[i].size(), 0.0));
    }
  }

  auto eval = [&] {
    Tape tape;
    return detail::run_program(f, tape, leaves).item();
  };

  GradCheckResult res;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    for (std::size_t i = 0; i < leaves[l].size(); ++i) {
      const double x0 = leaves[l].values[i];
      leaves[l].values[i] = x0 + epsilon;
      const double fp = eval();
      leaves[l].values[i] = x0 - epsilon;
      const double fm = eval();
      leaves[l].values[i] = x0;
      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double err = relative_error(analytic[l][i], numeric);
      ++res.coordinates;
      if (err > res.max_rel_error || res.coordinates == 1) {
        res.max_rel_error = err;
        res.worst_leaf = l;
        res.worst_index = i;
        res.worst_analytic = analytic[l][i];
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace promptsched::ad
