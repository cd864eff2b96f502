#pragma once

// Weighted multi-task objective L_total = sum_t lambda_t L_t and the rules
// that adapt lambda between steps.
//
// grad-norm:    lambda_t ∝ 1 / max(||g_t||, floor), so lambda_t ||g_t|| is the
//               same for every task
// inverse-loss: lambda_t ∝ 1 / max(L_t, floor)
// fixed:        unchanged
//
// Targets are rescaled to sum to T and blended into the previous weights
// with exponential smoothing.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "promptsched/autodiff.hpp"

namespace promptsched {

enum class LambdaStrategy { Fixed, GradNorm, InverseLoss };

inline std::string strategy_name(LambdaStrategy s) {
  switch (s) {
    case LambdaStrategy::Fixed: return "fixed";
    case LambdaStrategy::GradNorm: return "grad-norm";
    case LambdaStrategy::InverseLoss: return "inverse-loss";
  }
  return "?";
}

inline LambdaStrategy parse_strategy(const std::string& s) {
  if (s == "fixed") return LambdaStrategy::Fixed;
  if (s == "grad-norm") return LambdaStrategy::GradNorm;
  if (s == "inverse-loss") return LambdaStrategy::InverseLoss;
  throw Error("lambda strategy: unknown value '" + s + "' (expected fixed, grad-norm or inverse-loss)");
}

struct LossWeights {
  std::vector<double> lambdas;
  LambdaStrategy strategy = LambdaStrategy::GradNorm;

  static LossWeights uniform(std::size_t T, LambdaStrategy strategy) {
    return LossWeights{std::vector<double>(T, 1.0), strategy};
  }

  std::size_t T() const { return lambdas.size(); }

  void validate() const {
    if (lambdas.empty()) throw Error("loss weights: empty");
    double s = 0.0;
    for (double l : lambdas) {
      if (!(l > 0.0) || !std::isfinite(l)) throw Error("loss weights: lambda " + std::to_string(l) + " is not positive");
      s += l;
    }
    if (std::abs(s - static_cast<double>(lambdas.size())) > 1e-9)
      throw Error("loss weights: lambdas sum to " + std::to_string(s) + ", expected " + std::to_string(lambdas.size()));
  }
};

struct LambdaUpdateConfig {
  double epsilon_floor = 1e-8;
  /// Weight on the previous lambdas; 0 disables smoothing.
  double smoothing = 0.9;
};

inline ad::Var aggregate_loss(std::span<const ad::Var> losses, const LossWeights& weights) {
  if (losses.size() != weights.T())
    throw Error("aggregate_loss: " + std::to_string(losses.size()) + " losses for " + std::to_string(weights.T()) + " weights");
  weights.validate();
  ad::Var total = ad::scale_shift(losses[0], weights.lambdas[0]);
  for (std::size_t t = 1; t < losses.size(); ++t) total = ad::add(total, ad::scale_shift(losses[t], weights.lambdas[t]));
  return total;
}

inline double aggregate_loss(std::span<const double> losses, const LossWeights& weights) {
  if (losses.size() != weights.T())
    throw Error("aggregate_loss: " + std::to_string(losses.size()) + " losses for " + std::to_string(weights.T()) + " weights");
  weights.validate();
  double total = 0.0;
  for (std::size_t t = 0; t < losses.size(); ++t) total += weights.lambdas[t] * losses[t];
  return total;
}

namespace detail {
// lambda_t ∝ 1 / max(x_t, floor), rescaled to sum T; uniform when every x_t
// is below the floor.
inline std::vector<double> inverse_target(std::span<const double> x, double floor) {
  const double T = static_cast<double>(x.size());
  bool any = false;
  for (double v : x) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error("update_lambdas: statistic " + std::to_string(v) + " is not a nonnegative number");
    any = any || v > floor;
  }
  std::vector<double> out(x.size(), 1.0);
  if (!any) return out;
  double s = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) s += (out[t] = 1.0 / std::max(x[t], floor));
  for (auto& v : out) v *= T / s;
  return out;
}
}  // namespace detail

inline LossWeights update_lambdas(std::span<const double> grad_norms, std::span<const double> losses,
                                  const LossWeights& weights, const LambdaUpdateConfig& cfg = {}) {
  if (grad_norms.size() != weights.T() || losses.size() != weights.T())
    throw Error("update_lambdas: statistics do not match " + std::to_string(weights.T()) + " tasks");
  if (!(cfg.smoothing >= 0.0 && cfg.smoothing < 1.0)) throw Error("update_lambdas: smoothing must lie in [0, 1)");
  if (!(cfg.epsilon_floor > 0.0)) throw Error("update_lambdas: epsilon_floor must be positive");
  if (weights.strategy == LambdaStrategy::Fixed) return weights;

  const auto& stat = weights.strategy == LambdaStrategy::GradNorm ? grad_norms : losses;
  bool degenerate = true;
  for (double v : stat) degenerate = degenerate && v <= cfg.epsilon_floor;
  auto target = detail::inverse_target(stat, cfg.epsilon_floor);
  if (degenerate) return LossWeights{target, weights.strategy};

  const double T = static_cast<double>(weights.T());
  LossWeights out{std::vector<double>(weights.T()), weights.strategy};
  double s = 0.0;
  for (std::size_t t = 0; t < weights.T(); ++t)
    s += (out.lambdas[t] = cfg.smoothing * weights.lambdas[t] + (1.0 - cfg.smoothing) * target[t]);
  for (auto& l : out.lambdas) l *= T / s;
  return out;
}

}  // namespace promptsched
