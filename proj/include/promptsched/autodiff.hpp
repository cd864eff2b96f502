#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Tape is the computation record: every primitive appends one Node that
// stores its tag, input ids, attributes and the forward value. Forward values
// are produced by a single routine (Tape::compute) so a replay from the
// leaves goes through exactly the same arithmetic as the original pass.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptsched/tensor.hpp"

namespace promptsched::ad {

enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Mul,
  ScaleShift,
  SoftmaxTemp,
  Sigmoid,
  Relu,
  ConcatRows,
  SliceRows,
  MeanPool,
  LayerNorm,
  CrossEntropy,
  Transpose,
  Reshape,
  GatherRows,
  Sum,
};

inline std::string_view op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::ScaleShift: return "scale_shift";
    case Op::SoftmaxTemp: return "softmax_temp";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::ConcatRows: return "concat_rows";
    case Op::SliceRows: return "slice_rows";
    case Op::MeanPool: return "mean_pool";
    case Op::LayerNorm: return "layer_norm";
    case Op::CrossEntropy: return "cross_entropy";
    case Op::Transpose: return "transpose";
    case Op::Reshape: return "reshape";
    case Op::GatherRows: return "gather_rows";
    case Op::Sum: return "sum";
  }
  return "?";
}

struct Node {
  Op op = Op::Leaf;
  std::vector<NodeId> inputs;
  Tensor out;
  bool requires_grad = false;
  // Attributes. Meaning depends on op: (scale, shift), tau, eps; slice begin
  // and count, pool group; gather ids or class labels; target shape.
  double a = 0.0;
  double b = 0.0;
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  std::vector<std::size_t> ids;
  Shape target;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  NodeId id = kNoNode;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  double item() const { return value().values.at(0); }
  const std::optional<std::vector<double>>& grad() const { return value().grad; }
};

struct BackwardReport {
  /// Leaves that require gradients but do not reach the loss. Their grad is
  /// left absent.
  std::vector<NodeId> detached_leaves;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Trainable leaf. Rejects non-finite values.
  Var leaf(Tensor t, bool requires_grad = true) {
    if (!all_finite(t.values)) throw Error("leaf: non-finite input");
    Node n;
    n.op = Op::Leaf;
    n.requires_grad = requires_grad;
    n.out = std::move(t);
    n.out.grad.reset();
    return push(std::move(n), false);
  }
  Var constant(Tensor t) { return leaf(std::move(t), false); }

  const Node& node(NodeId id) const { return nodes_.at(id); }
  Node& node(NodeId id) { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  const std::deque<Node>& nodes() const { return nodes_; }

  /// Appends a primitive node and evaluates it.
  Var push(Node n, bool evaluate = true) {
    const NodeId id = nodes_.size();
    if (n.op != Op::Leaf) {
      for (auto in : n.inputs) {
        if (in >= id) throw Error(std::string(op_name(n.op)) + ": input is not on this tape");
        n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
      }
    }
    nodes_.push_back(std::move(n));
    Node& back = nodes_.back();
    if (evaluate) {
      back.out = compute(back);
      if (!all_finite(back.out.values))
        throw NonFiniteError(std::string(op_name(back.op)) + ": non-finite result");
    }
    back.out.node_id = id;
    return Var{this, id};
  }

  /// Reverse sweep from a scalar loss. Gradients are recomputed from scratch
  /// on every call, accumulating in fixed reverse-topological order.
  BackwardReport backward(Var loss) {
    if (loss.tape != this) throw Error("backward: loss is not on this tape");
    if (nodes_[loss.id].out.size() != 1)
      throw Error("backward: loss must be scalar, got shape " + shape_str(nodes_[loss.id].out.shape));
    for (auto& n : nodes_) n.out.grad.reset();

    std::vector<char> reach(nodes_.size(), 0);
    reach[loss.id] = 1;
    for (NodeId i = loss.id + 1; i-- > 0;) {
      if (!reach[i]) continue;
      for (auto in : nodes_[i].inputs) reach[in] = 1;
    }
    BackwardReport report;
    for (NodeId i = 0; i < nodes_.size(); ++i) {
      auto& n = nodes_[i];
      if (reach[i] && n.requires_grad)
        n.out.grad.emplace(n.out.size(), 0.0);
      else if (n.op == Op::Leaf && n.requires_grad)
        report.detached_leaves.push_back(i);
    }
    if (!nodes_[loss.id].requires_grad) return report;
    (*nodes_[loss.id].out.grad)[0] = 1.0;
    for (NodeId i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.op == Op::Leaf || !n.out.grad) continue;
      propagate(n);
    }
    return report;
  }

  /// Recomputes every non-leaf node from the recorded leaves and reports
  /// whether all activations are bit-identical to the stored ones.
  bool replay_matches() const {
    for (const auto& n : nodes_) {
      if (n.op == Op::Leaf) continue;
      Tensor again = compute(n);
      if (again.shape != n.out.shape) return false;
      if (std::memcmp(again.values.data(), n.out.values.data(), again.size() * sizeof(double)) != 0)
        return false;
    }
    return true;
  }

 private:
  const Tensor& in(const Node& n, std::size_t k) const { return nodes_[n.inputs[k]].out; }
  std::vector<double>* gin(const Node& n, std::size_t k) {
    auto& g = nodes_[n.inputs[k]].out.grad;
    return g ? &*g : nullptr;
  }

  Tensor compute(const Node& n) const;
  void propagate(Node& n);

  // deque: references returned by Var::value() stay valid as the tape grows.
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->node(id).out; }

namespace detail {

[[noreturn]] inline void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  throw Error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline Tape& same_tape(std::string_view op, std::initializer_list<Var> vs) {
  Tape* t = nullptr;
  for (const auto& v : vs) {
    if (!v.tape) throw Error(std::string(op) + ": null variable");
    if (t && v.tape != t) throw Error(std::string(op) + ": operands live on different tapes");
    t = v.tape;
  }
  return *t;
}

// (rows, cols) view of a matmul operand; rank-1 left operands are row
// vectors, rank-1 right operands are column vectors.
inline std::pair<std::size_t, std::size_t> mm_dims(const Tensor& t, bool left) {
  if (t.rank() == 1) return left ? std::pair{std::size_t{1}, t.shape[0]} : std::pair{t.shape[0], std::size_t{1}};
  return {t.shape[0], t.shape[1]};
}

inline bool row_broadcast(const Tensor& a, const Tensor& b) {
  return a.rank() == 2 && b.rank() == 1 && b.shape[0] == a.shape[1];
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Tensor Tape::compute(const Node& n) const {
  using detail::mm_dims;
  switch (n.op) {
    case Op::Leaf:
      return n.out;
    case Op::MatMul: {
      const auto& A = in(n, 0);
      const auto& B = in(n, 1);
      auto [m, k] = mm_dims(A, true);
      auto [k2, p] = mm_dims(B, false);
      Tensor C = Tensor::zeros(n.target);
      double* c = C.values.data();
      const double* a = A.values.data();
      const double* b = B.values.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t q = 0; q < k; ++q) {
          const double aiq = a[i * k + q];
          const double* brow = b + q * p;
          double* crow = c + i * p;
          for (std::size_t j = 0; j < p; ++j) crow[j] += aiq * brow[j];
        }
      (void)k2;
      return C;
    }
    case Op::Add:
    case Op::Mul: {
      const auto& A = in(n, 0);
      const auto& B = in(n, 1);
      Tensor C = A;
      C.grad.reset();
      const bool mul = n.op == Op::Mul;
      if (A.shape == B.shape) {
        for (std::size_t i = 0; i < C.size(); ++i)
          C.values[i] = mul ? A.values[i] * B.values[i] : A.values[i] + B.values[i];
      } else {
        const std::size_t cols = B.size();
        for (std::size_t i = 0; i < C.size(); ++i)
          C.values[i] = mul ? A.values[i] * B.values[i % cols] : A.values[i] + B.values[i % cols];
      }
      return C;
    }
    case Op::ScaleShift: {
      Tensor C = in(n, 0);
      C.grad.reset();
      for (auto& v : C.values) v = n.a * v + n.b;
      return C;
    }
    case Op::SoftmaxTemp: {
      Tensor C = in(n, 0);
      C.grad.reset();
      const std::size_t cols = C.cols();
      const std::size_t rows = C.size() / cols;
      for (std::size_t r = 0; r < rows; ++r) {
        double* x = C.values.data() + r * cols;
        const double mx = *std::max_element(x, x + cols);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          x[j] = std::exp((x[j] - mx) / n.a);
          z += x[j];
        }
        for (std::size_t j = 0; j < cols; ++j) x[j] /= z;
      }
      return C;
    }
    case Op::Sigmoid: {
      Tensor C = in(n, 0);
      C.grad.reset();
      for (auto& v : C.values) v = detail::stable_sigmoid(v);
      return C;
    }
    case Op::Relu: {
      Tensor C = in(n, 0);
      C.grad.reset();
      for (auto& v : C.values) v = v > 0.0 ? v : 0.0;
      return C;
    }
    case Op::ConcatRows: {
      Tensor C = Tensor::zeros(n.target);
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const auto& X = in(n, k);
        std::copy(X.values.begin(), X.values.end(), C.values.begin() + static_cast<std::ptrdiff_t>(off));
        off += X.size();
      }
      return C;
    }
    case Op::SliceRows: {
      const auto& X = in(n, 0);
      const std::size_t cols = X.cols();
      auto b = X.values.begin() + static_cast<std::ptrdiff_t>(n.i0 * cols);
      return Tensor(n.target, std::vector<double>(b, b + static_cast<std::ptrdiff_t>(n.i1 * cols)));
    }
    case Op::MeanPool: {
      const auto& X = in(n, 0);
      const std::size_t cols = X.cols();
      const std::size_t group = n.i0;
      Tensor C = Tensor::zeros(n.target);
      const std::size_t groups = X.rows() / group;
      for (std::size_t g = 0; g < groups; ++g) {
        double* c = C.values.data() + g * cols;
        for (std::size_t r = 0; r < group; ++r) {
          const double* x = X.values.data() + (g * group + r) * cols;
          for (std::size_t j = 0; j < cols; ++j) c[j] += x[j];
        }
        for (std::size_t j = 0; j < cols; ++j) c[j] /= static_cast<double>(group);
      }
      return C;
    }
    case Op::LayerNorm: {
      Tensor C = in(n, 0);
      C.grad.reset();
      const std::size_t cols = C.cols();
      const std::size_t rows = C.size() / cols;
      for (std::size_t r = 0; r < rows; ++r) {
        double* x = C.values.data() + r * cols;
        double mu = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mu += x[j];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(var + n.a);
        for (std::size_t j = 0; j < cols; ++j) x[j] = (x[j] - mu) * inv;
      }
      return C;
    }
    case Op::CrossEntropy: {
      const auto& L = in(n, 0);
      const std::size_t cols = L.cols();
      const std::size_t rows = L.size() / cols;
      double total = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* x = L.values.data() + r * cols;
        const double mx = *std::max_element(x, x + cols);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
        total += std::log(z) + mx - x[n.ids[r]];
      }
      return Tensor::scalar(total / static_cast<double>(rows));
    }
    case Op::Transpose: {
      const auto& X = in(n, 0);
      const std::size_t r = X.shape[0], c = X.shape[1];
      Tensor C = Tensor::zeros({c, r});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) C.values[j * r + i] = X.values[i * c + j];
      return C;
    }
    case Op::Reshape:
      return Tensor(n.target, in(n, 0).values);
    case Op::GatherRows: {
      const auto& X = in(n, 0);
      const std::size_t cols = X.cols();
      Tensor C = Tensor::zeros(n.target);
      for (std::size_t r = 0; r < n.ids.size(); ++r)
        std::copy_n(X.values.begin() + static_cast<std::ptrdiff_t>(n.ids[r] * cols), cols,
                    C.values.begin() + static_cast<std::ptrdiff_t>(r * cols));
      return C;
    }
    case Op::Sum: {
      double s = 0.0;
      for (double v : in(n, 0).values) s += v;
      return Tensor::scalar(s);
    }
  }
  throw Error("tape: unknown op");
}

inline void Tape::propagate(Node& n) {
  using detail::mm_dims;
  const auto& dy = *n.out.grad;
  switch (n.op) {
    case Op::Leaf:
      return;
    case Op::MatMul: {
      const auto& A = in(n, 0);
      const auto& B = in(n, 1);
      auto [m, k] = mm_dims(A, true);
      auto [k2, p] = mm_dims(B, false);
      (void)k2;
      if (auto* ga = gin(n, 0)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t q = 0; q < k; ++q) {
            const double* brow = B.values.data() + q * p;
            const double* drow = dy.data() + i * p;
            double s = 0.0;
            for (std::size_t j = 0; j < p; ++j) s += drow[j] * brow[j];
            (*ga)[i * k + q] += s;
          }
      }
      if (auto* gb = gin(n, 1)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t q = 0; q < k; ++q) {
            const double aiq = A.values[i * k + q];
            const double* drow = dy.data() + i * p;
            double* grow = gb->data() + q * p;
            for (std::size_t j = 0; j < p; ++j) grow[j] += aiq * drow[j];
          }
      }
      return;
    }
    case Op::Add:
    case Op::Mul: {
      const auto& A = in(n, 0);
      const auto& B = in(n, 1);
      const bool mul = n.op == Op::Mul;
      const std::size_t cols = B.size();
      if (auto* ga = gin(n, 0))
        for (std::size_t i = 0; i < dy.size(); ++i) (*ga)[i] += mul ? dy[i] * B.values[i % cols] : dy[i];
      if (auto* gb = gin(n, 1))
        for (std::size_t i = 0; i < dy.size(); ++i) (*gb)[i % cols] += mul ? dy[i] * A.values[i] : dy[i];
      return;
    }
    case Op::ScaleShift: {
      if (auto* g = gin(n, 0))
        for (std::size_t i = 0; i < dy.size(); ++i) (*g)[i] += n.a * dy[i];
      return;
    }
    case Op::SoftmaxTemp: {
      auto* g = gin(n, 0);
      if (!g) return;
      const auto& y = n.out.values;
      const std::size_t cols = n.out.cols();
      const std::size_t rows = y.size() / cols;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t o = r * cols;
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += dy[o + j] * y[o + j];
        for (std::size_t j = 0; j < cols; ++j) (*g)[o + j] += y[o + j] * (dy[o + j] - dot) / n.a;
      }
      return;
    }
    case Op::Sigmoid: {
      if (auto* g = gin(n, 0)) {
        const auto& y = n.out.values;
        for (std::size_t i = 0; i < dy.size(); ++i) (*g)[i] += dy[i] * y[i] * (1.0 - y[i]);
      }
      return;
    }
    case Op::Relu: {
      if (auto* g = gin(n, 0)) {
        const auto& x = in(n, 0).values;
        for (std::size_t i = 0; i < dy.size(); ++i)
          if (x[i] > 0.0) (*g)[i] += dy[i];
      }
      return;
    }
    case Op::ConcatRows: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t len = in(n, k).size();
        if (auto* g = gin(n, k))
          for (std::size_t i = 0; i < len; ++i) (*g)[i] += dy[off + i];
        off += len;
      }
      return;
    }
    case Op::SliceRows: {
      if (auto* g = gin(n, 0)) {
        const std::size_t off = n.i0 * in(n, 0).cols();
        for (std::size_t i = 0; i < dy.size(); ++i) (*g)[off + i] += dy[i];
      }
      return;
    }
    case Op::MeanPool: {
      if (auto* g = gin(n, 0)) {
        const auto& X = in(n, 0);
        const std::size_t cols = X.cols();
        const std::size_t group = n.i0;
        const double scale = 1.0 / static_cast<double>(group);
        for (std::size_t r = 0; r < X.rows(); ++r) {
          const double* d = dy.data() + (r / group) * cols;
          for (std::size_t j = 0; j < cols; ++j) (*g)[r * cols + j] += d[j] * scale;
        }
      }
      return;
    }
    case Op::LayerNorm: {
      auto* g = gin(n, 0);
      if (!g) return;
      const auto& X = in(n, 0).values;
      const auto& y = n.out.values;
      const std::size_t cols = n.out.cols();
      const std::size_t rows = y.size() / cols;
      const double inv_n = 1.0 / static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t o = r * cols;
        double mu = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mu += X[o + j];
        mu *= inv_n;
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) var += (X[o + j] - mu) * (X[o + j] - mu);
        var *= inv_n;
        const double inv = 1.0 / std::sqrt(var + n.a);
        double mdy = 0.0, mdyy = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          mdy += dy[o + j];
          mdyy += dy[o + j] * y[o + j];
        }
        mdy *= inv_n;
        mdyy *= inv_n;
        for (std::size_t j = 0; j < cols; ++j) (*g)[o + j] += inv * (dy[o + j] - mdy - y[o + j] * mdyy);
      }
      return;
    }
    case Op::CrossEntropy: {
      auto* g = gin(n, 0);
      if (!g) return;
      const auto& L = in(n, 0);
      const std::size_t cols = L.cols();
      const std::size_t rows = L.size() / cols;
      const double scale = dy[0] / static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* x = L.values.data() + r * cols;
        const double mx = *std::max_element(x, x + cols);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
        for (std::size_t j = 0; j < cols; ++j) {
          const double p = std::exp(x[j] - mx) / z;
          (*g)[r * cols + j] += scale * (p - (j == n.ids[r] ? 1.0 : 0.0));
        }
      }
      return;
    }
    case Op::Transpose: {
      if (auto* g = gin(n, 0)) {
        const auto& X = in(n, 0);
        const std::size_t r = X.shape[0], c = X.shape[1];
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += dy[j * r + i];
      }
      return;
    }
    case Op::Reshape: {
      if (auto* g = gin(n, 0))
        for (std::size_t i = 0; i < dy.size(); ++i) (*g)[i] += dy[i];
      return;
    }
    case Op::GatherRows: {
      if (auto* g = gin(n, 0)) {
        const std::size_t cols = in(n, 0).cols();
        for (std::size_t r = 0; r < n.ids.size(); ++r)
          for (std::size_t j = 0; j < cols; ++j) (*g)[n.ids[r] * cols + j] += dy[r * cols + j];
      }
      return;
    }
    case Op::Sum: {
      if (auto* g = gin(n, 0))
        for (auto& v : *g) v += dy[0];
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Primitives. Each validates shapes, then records and evaluates one node.

/// (m,k)x(k,n) -> (m,n). A rank-1 left operand is a row vector, a rank-1
/// right operand a column vector; the corresponding output axis is dropped.
inline Var matmul(Var a, Var b) {
  auto& t = detail::same_tape("matmul", {a, b});
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() > 2 || B.rank() > 2) detail::shape_error("matmul", A.shape, B.shape);
  auto [m, k] = detail::mm_dims(A, true);
  auto [k2, p] = detail::mm_dims(B, false);
  if (k != k2) detail::shape_error("matmul", A.shape, B.shape);
  Node n;
  n.op = Op::MatMul;
  n.inputs = {a.id, b.id};
  if (A.rank() == 2 && B.rank() == 2) n.target = {m, p};
  else if (A.rank() == 2) n.target = {m};
  else if (B.rank() == 2) n.target = {p};
  else n.target = {1};
  return t.push(std::move(n));
}

namespace detail {
inline Var elementwise(Op op, Var a, Var b) {
  auto name = op_name(op);
  auto& t = same_tape(name, {a, b});
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape != B.shape && !row_broadcast(A, B)) shape_error(name, A.shape, B.shape);
  Node n;
  n.op = op;
  n.inputs = {a.id, b.id};
  return t.push(std::move(n));
}
inline Var unary(Op op, Var x, double attr = 0.0) {
  auto& t = same_tape(op_name(op), {x});
  Node n;
  n.op = op;
  n.inputs = {x.id};
  n.a = attr;
  return t.push(std::move(n));
}
}  // namespace detail

/// a + b; b may be a rank-1 row broadcast over a rank-2 a.
inline Var add(Var a, Var b) { return detail::elementwise(Op::Add, a, b); }
/// a ⊙ b with the same broadcast rule as add.
inline Var mul(Var a, Var b) { return detail::elementwise(Op::Mul, a, b); }

/// scale * x + shift, with constant coefficients.
inline Var scale_shift(Var x, double scale, double shift = 0.0) {
  auto& t = detail::same_tape("scale_shift", {x});
  if (!std::isfinite(scale) || !std::isfinite(shift)) throw Error("scale_shift: non-finite coefficient");
  Node n;
  n.op = Op::ScaleShift;
  n.inputs = {x.id};
  n.a = scale;
  n.b = shift;
  return t.push(std::move(n));
}

/// exp(x_k / tau) / sum_j exp(x_j / tau) along the last axis (each row of a
/// rank-2 input independently). The row maximum is subtracted first.
inline Var softmax_temp(Var logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error("softmax_temp: temperature must be positive, got " + std::to_string(tau));
  if (logits.value().rank() > 2) throw Error("softmax_temp: rank must be 1 or 2, got " + shape_str(logits.shape()));
  return detail::unary(Op::SoftmaxTemp, logits, tau);
}

inline Var sigmoid(Var x) { return detail::unary(Op::Sigmoid, x); }
inline Var relu(Var x) { return detail::unary(Op::Relu, x); }

/// Row-wise normalisation to zero mean and unit variance (no affine part).
inline Var layer_norm(Var x, double eps = 1e-5) {
  if (!(eps > 0.0)) throw Error("layer_norm: eps must be positive");
  return detail::unary(Op::LayerNorm, x, eps);
}

/// Stacks rank-2 blocks (rank-1 inputs count as one row) with equal widths.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_rows: no inputs");
  Tape& t = *parts[0].tape;
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  Node n;
  n.op = Op::ConcatRows;
  for (const auto& p : parts) {
    if (p.tape != &t) throw Error("concat_rows: operands live on different tapes");
    const auto& v = p.value();
    if (v.rank() > 2 || v.cols() != cols) detail::shape_error("concat_rows", parts[0].shape(), v.shape);
    rows += v.rows();
    n.inputs.push_back(p.id);
  }
  n.target = {rows, cols};
  return t.push(std::move(n));
}
inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

/// Rows [begin, begin + count) of a rank-2 tensor.
inline Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  auto& t = detail::same_tape("slice_rows", {x});
  const auto& X = x.value();
  if (X.rank() != 2 || count == 0 || begin + count > X.shape[0])
    throw Error("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                ") out of range for " + shape_str(X.shape));
  Node n;
  n.op = Op::SliceRows;
  n.inputs = {x.id};
  n.i0 = begin;
  n.i1 = count;
  n.target = {count, X.shape[1]};
  return t.push(std::move(n));
}

/// Means over consecutive groups of `group` rows: (n, d) -> (n / group, d).
inline Var mean_pool(Var x, std::size_t group) {
  auto& t = detail::same_tape("mean_pool", {x});
  const auto& X = x.value();
  if (X.rank() != 2 || group == 0 || X.shape[0] % group != 0)
    throw Error("mean_pool: group " + std::to_string(group) + " does not divide rows of " + shape_str(X.shape));
  Node n;
  n.op = Op::MeanPool;
  n.inputs = {x.id};
  n.i0 = group;
  n.target = {X.shape[0] / group, X.shape[1]};
  return t.push(std::move(n));
}

/// Mean cross-entropy of softmax(logits) against integer labels; rank-1
/// logits take a single label.
inline Var cross_entropy(Var logits, std::vector<std::size_t> labels) {
  auto& t = detail::same_tape("cross_entropy", {logits});
  const auto& L = logits.value();
  if (L.rank() > 2) throw Error("cross_entropy: logits must be rank 1 or 2, got " + shape_str(L.shape));
  if (labels.size() != L.rows())
    throw Error("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + shape_str(L.shape));
  for (auto y : labels)
    if (y >= L.cols())
      throw Error("cross_entropy: label " + std::to_string(y) + " out of range for " + std::to_string(L.cols()) + " classes");
  Node n;
  n.op = Op::CrossEntropy;
  n.inputs = {logits.id};
  n.ids = std::move(labels);
  return t.push(std::move(n));
}

inline Var transpose(Var x) {
  if (x.value().rank() != 2) throw Error("transpose: rank-2 input required, got " + shape_str(x.shape()));
  return detail::unary(Op::Transpose, x);
}

inline Var reshape(Var x, Shape shape) {
  auto& t = detail::same_tape("reshape", {x});
  if (shape_size(shape) != x.size()) detail::shape_error("reshape", x.shape(), shape);
  Node n;
  n.op = Op::Reshape;
  n.inputs = {x.id};
  n.target = std::move(shape);
  return t.push(std::move(n));
}

/// Rows of `table` selected by `ids` (embedding lookup).
inline Var gather_rows(Var table, std::vector<std::size_t> ids) {
  auto& t = detail::same_tape("gather_rows", {table});
  const auto& X = table.value();
  if (X.rank() != 2 || ids.empty()) throw Error("gather_rows: rank-2 table and nonempty ids required");
  for (auto i : ids)
    if (i >= X.shape[0])
      throw Error("gather_rows: id " + std::to_string(i) + " out of range for " + shape_str(X.shape));
  Node n;
  n.op = Op::GatherRows;
  n.inputs = {table.id};
  n.target = {ids.size(), X.shape[1]};
  n.ids = std::move(ids);
  return t.push(std::move(n));
}

inline Var sum(Var x) { return detail::unary(Op::Sum, x); }

/// Row r of a rank-2 variable as a rank-1 variable.
inline Var row(Var x, std::size_t r) {
  return reshape(slice_rows(x, r, 1), {x.value().cols()});
}

}  // namespace promptsched::ad
