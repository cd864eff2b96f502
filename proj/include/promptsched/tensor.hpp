#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace promptsched {

/// Raised for every contract violation in the library (bad shapes, invalid
/// hyperparameters, malformed files). The message always names the operation.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An operation produced NaN or infinity.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) {
    if (e == 0) throw Error("tensor: zero extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

/// Dense row-major array of doubles with an optional gradient buffer.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::optional<std::vector<double>> grad;
  NodeId node_id = kNoNode;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (shape.empty()) throw Error("tensor: rank-0 shape, use {1} for scalars");
    if (shape_size(shape) != values.size())
      throw Error("tensor: shape " + shape_str(shape) + " does not match " +
                  std::to_string(values.size()) + " values");
  }

  static Tensor zeros(Shape s) {
    auto n = shape_size(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor filled(Shape s, double v) {
    auto n = shape_size(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }
  static Tensor identity(std::size_t n) {
    auto t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.values[i * n + i] = 1.0;
    return t;
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return values.size() == 1; }
  std::size_t rows() const { return rank() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.back(); }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }

  /// Row r of a rank-2 tensor as a rank-1 tensor.
  Tensor row(std::size_t r) const {
    if (rank() != 2 || r >= shape[0])
      throw Error("tensor: row " + std::to_string(r) + " out of range for " + shape_str(shape));
    auto b = values.begin() + static_cast<std::ptrdiff_t>(r * cols());
    return Tensor::vector(std::vector<double>(b, b + static_cast<std::ptrdiff_t>(cols())));
  }
};

}  // namespace promptsched
