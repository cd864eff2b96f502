#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "promptsched/tensor.hpp"

namespace promptsched {

/// Named parameter tensors, iterated in lexicographic name order.
class ParameterStore {
 public:
  void add(const std::string& name, Tensor t) {
    if (!all_finite(t.values)) throw Error("parameters: non-finite initial value for " + name);
    t.grad.reset();
    params_.insert_or_assign(name, std::move(t));
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("parameters: no parameter named '" + name + "'");
    return it->second;
  }
  Tensor& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("parameters: no parameter named '" + name + "'");
    return it->second;
  }
  const std::map<std::string, Tensor>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }
  bool operator==(const ParameterStore& o) const {
    if (params_.size() != o.params_.size()) return false;
    for (auto a = params_.begin(), b = o.params_.begin(); a != params_.end(); ++a, ++b)
      if (a->first != b->first || a->second.shape != b->second.shape || a->second.values != b->second.values)
        return false;
    return true;
  }

 private:
  std::map<std::string, Tensor> params_;
};

using GradMap = std::map<std::string, std::vector<double>>;

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Per-parameter learning-rate multipliers; absent names use 1.
  std::map<std::string, double> lr_scale;
};

/// Applies one update per call to every parameter present in the gradient
/// map. Parameters absent from the map are left untouched.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {}

  void step(ParameterStore& params, const GradMap& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
      auto& p = params.get(name).values;
      if (g.size() != p.size()) throw Error("optimizer: gradient size mismatch for " + name);
      auto scale = cfg_.lr_scale.find(name);
      const double lr = cfg_.learning_rate * (scale == cfg_.lr_scale.end() ? 1.0 : scale->second);
      if (cfg_.kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
        continue;
      }
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(p.size(), 0.0);
        v.assign(p.size(), 0.0);
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace promptsched
