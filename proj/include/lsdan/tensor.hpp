#pragma once

// Dense 2-D tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Every operation whose inputs
// require gradients records its inputs and a backward closure on the result;
// ComputationTape orders those records topologically from a scalar root and
// sweeps them in reverse. Values are immutable once produced; only leaf
// tensors (parameters) may be updated in place, by the optimizer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lsdan/bit_matrix.hpp"
#include "lsdan/errors.hpp"

namespace lsdan {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(Shape s) {
  return "[" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]";
}

inline std::ostream& operator<<(std::ostream& os, Shape s) { return os << to_string(s); }

namespace detail {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad, accumulates into inputs' grads.
  std::function<void(const Node&)> backward;

  bool is_leaf() const noexcept { return inputs.empty(); }

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::Node>()) {}

  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (values.size() != rows * cols)
      throw ShapeError("tensor " + to_string(Shape{rows, cols}) + " given " + std::to_string(values.size()) +
                       " values");
    node_->rows = rows;
    node_->cols = cols;
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false) {
    return Tensor(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
  }

  static Tensor filled(std::size_t rows, std::size_t cols, double v, bool requires_grad = false) {
    return Tensor(rows, cols, std::vector<double>(rows * cols, v), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return Tensor(1, 1, {v}, requires_grad); }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad = false) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged initializer for tensor");
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(v), requires_grad);
  }

  std::size_t rows() const noexcept { return node_->rows; }
  std::size_t cols() const noexcept { return node_->cols; }
  std::size_t size() const noexcept { return node_->values.size(); }
  Shape shape() const noexcept { return {node_->rows, node_->cols}; }

  double operator()(std::size_t i, std::size_t j) const { return node_->values[i * node_->cols + j]; }
  double item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + to_string(shape()));
    return node_->values[0];
  }

  std::span<const double> values() const noexcept { return node_->values; }

  // Leaf tensors only; produced tensors are immutable.
  std::span<double> mutable_values() {
    if (!node_->is_leaf()) throw ContractError(std::string("cannot mutate result of op '") + node_->op + "'");
    return node_->values;
  }

  bool requires_grad() const noexcept { return node_->requires_grad; }
  bool is_leaf() const noexcept { return node_->is_leaf(); }
  const char* op_name() const noexcept { return node_->op; }

  bool has_grad() const noexcept { return !node_->grad.empty(); }
  // Empty span when no gradient has reached this tensor.
  std::span<const double> grad() const noexcept { return node_->grad; }
  double grad_at(std::size_t i, std::size_t j) const {
    return node_->grad.empty() ? 0.0 : node_->grad[i * node_->cols + j];
  }
  void zero_grad() { node_->grad.clear(); }

  void backward() const;

  const detail::Node* id() const noexcept { return node_.get(); }

 private:
  friend class ComputationTape;
  template <class Backward>
  friend Tensor make_op(const char*, std::size_t, std::size_t, std::vector<double>, std::vector<Tensor>, Backward&&);
  friend detail::Node& node_of(const Tensor& t) noexcept;

  std::shared_ptr<detail::Node> node_;
};

inline detail::Node& node_of(const Tensor& t) noexcept { return *t.node_; }

/// Builds the result of an operation. When no input requires a gradient the
/// result is a constant and nothing is recorded.
template <class Backward>
Tensor make_op(const char* name, std::size_t rows, std::size_t cols, std::vector<double> values,
               std::vector<Tensor> inputs, Backward&& backward) {
  Tensor out(rows, cols, std::move(values));
  out.node_->op = name;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs.reserve(inputs.size());
  for (auto& t : inputs) out.node_->inputs.push_back(t.node_);
  out.node_->backward = std::forward<Backward>(backward);
  return out;
}

/// Topologically ordered record of every operation reachable from a root.
class ComputationTape {
 public:
  explicit ComputationTape(const Tensor& root) : root_(root.node_) {
    // Iterative post-order DFS; producers land before consumers.
    std::unordered_set<const detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    if (root_->requires_grad) stack.emplace_back(root_.get(), 0);
    seen.insert(root_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        detail::Node* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        continue;
      }
      order_.push_back(node);
      stack.pop_back();
    }
  }

  std::size_t size() const noexcept { return order_.size(); }

  std::vector<std::string> operations() const {
    std::vector<std::string> ops;
    ops.reserve(order_.size());
    for (auto* n : order_) ops.emplace_back(n->op);
    return ops;
  }

  // Position of a tensor in the order, or size() if absent.
  std::size_t position(const Tensor& t) const {
    auto it = std::find(order_.begin(), order_.end(), t.node_.get());
    return static_cast<std::size_t>(it - order_.begin());
  }

  /// Seeds d(root)/d(root) = 1 and propagates. Intermediate gradients are
  /// reset first so that only leaves accumulate across repeated sweeps.
  void backward() {
    if (root_->values.size() != 1)
      throw ContractError("backward() needs a scalar loss, got " + to_string({root_->rows, root_->cols}));
    if (!root_->requires_grad) return;
    for (auto* n : order_)
      if (!n->is_leaf()) n->grad.assign(n->values.size(), 0.0);
    auto& seed = root_->grad_buffer();
    seed[0] = root_->is_leaf() ? seed[0] + 1.0 : 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      detail::Node* n = *it;
      if (n->backward) n->backward(*n);
    }
  }

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<detail::Node*> order_;
};

inline void Tensor::backward() const {
  ComputationTape tape(*this);
  tape.backward();
}

namespace detail {

inline bool wants(const std::shared_ptr<Node>& n) noexcept { return n->requires_grad; }

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(op) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const std::size_t p = a.rows(), q = a.cols(), s = b.cols();
  std::vector<double> out(p * s, 0.0);
  auto av = a.values();
  auto bv = b.values();
  // i-k-j order skipping zero entries of a; feature matrices are mostly zeros.
  for (std::size_t i = 0; i < p; ++i) {
    double* orow = out.data() + i * s;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = av[i * q + k];
      if (aik == 0.0) continue;
      const double* brow = bv.data() + k * s;
      for (std::size_t j = 0; j < s; ++j) orow[j] += aik * brow[j];
    }
  }
  return make_op("matmul", p, s, std::move(out), {a, b}, [p, q, s](const detail::Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    const auto& g = self.grad;
    if (an.requires_grad) {
      auto& ga = an.grad_buffer();
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t k = 0; k < q; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < s; ++j) acc += g[i * s + j] * bn.values[k * s + j];
          ga[i * q + k] += acc;
        }
    }
    if (bn.requires_grad) {
      auto& gb = bn.grad_buffer();
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t k = 0; k < q; ++k) {
          const double aik = an.values[i * q + k];
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < s; ++j) gb[k * s + j] += aik * g[i * s + j];
        }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  auto v = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return make_op("transpose", c, r, std::move(out), {a}, [r, c](const detail::Node& self) {
    auto& ga = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a.values()[k] + b.values()[k];
  return make_op("add", a.rows(), a.cols(), std::move(out), {a, b}, [](const detail::Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a.values()[k] - b.values()[k];
  return make_op("sub", a.rows(), a.cols(), std::move(out), {a, b}, [](const detail::Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t t = 0; t < 2; ++t) {
      auto& in = self.inputs[t];
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += sign[t] * self.grad[k];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = s * a.values()[k];
  return make_op("scale", a.rows(), a.cols(), std::move(out), {a}, [s](const detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += s * self.grad[k];
  });
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("hadamard", a, b);
  std::vector<double> out(a.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a.values()[k] * b.values()[k];
  return make_op("hadamard", a.rows(), a.cols(), std::move(out), {a, b}, [](const detail::Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (an.requires_grad) {
      auto& g = an.grad_buffer();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k] * bn.values[k];
    }
    if (bn.requires_grad) {
      auto& g = bn.grad_buffer();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k] * an.values[k];
    }
  });
}

inline Tensor leaky_relu(const Tensor& a, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw ContractError("leaky_relu: slope must lie in (0,1)");
  std::vector<double> out(a.size());
  auto v = a.values();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = v[k] >= 0.0 ? v[k] : slope * v[k];
  return make_op("leaky_relu", a.rows(), a.cols(), std::move(out), {a}, [slope](const detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k] * (in.values[k] >= 0.0 ? 1.0 : slope);
  });
}

/// max(0, x). The derivative at exactly 0 is taken as 1 (the active branch).
inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  auto v = a.values();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = v[k] >= 0.0 ? v[k] : 0.0;
  return make_op("relu", a.rows(), a.cols(), std::move(out), {a}, [](const detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k)
      if (in.values[k] >= 0.0) g[k] += self.grad[k];
  });
}

inline Tensor elu(const Tensor& a, double alpha = 1.0) {
  std::vector<double> out(a.size());
  auto v = a.values();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = v[k] >= 0.0 ? v[k] : alpha * std::expm1(v[k]);
  return make_op("elu", a.rows(), a.cols(), std::move(out), {a}, [alpha](const detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k)
      g[k] += self.grad[k] * (in.values[k] >= 0.0 ? 1.0 : self.values[k] + alpha);
  });
}

inline double stable_sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  auto v = a.values();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = stable_sigmoid(v[k]);
  return make_op("sigmoid", a.rows(), a.cols(), std::move(out), {a}, [](const detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double y = self.values[k];
      g[k] += self.grad[k] * y * (1.0 - y);
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

/// Joins operands side by side: row i of the result is row i of each operand
/// concatenated in order. All operands must have the same row count.
inline Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const auto& t : parts) {
    if (t.rows() != r)
      throw ShapeError("concat_rows: " + to_string(parts[0].shape()) + " vs " + to_string(t.shape()));
    c += t.cols();
  }
  std::vector<double> out(r * c);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : parts) {
    offsets.push_back(off);
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(t.values().data() + i * t.cols(), t.cols(), out.data() + i * c + off);
    off += t.cols();
  }
  return make_op("concat_rows", r, c, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                 [r, c, offsets](const detail::Node& self) {
                   for (std::size_t t = 0; t < self.inputs.size(); ++t) {
                     auto& in = *self.inputs[t];
                     if (!in.requires_grad) continue;
                     auto& g = in.grad_buffer();
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t j = 0; j < in.cols; ++j) g[i * in.cols + j] += self.grad[i * c + offsets[t] + j];
                   }
                 });
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat_rows(parts);
}

/// Rows [begin, begin+count) of a.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows())
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) + ") of " +
                     to_string(a.shape()));
  const std::size_t c = a.cols();
  std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(begin * c),
                          a.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  return make_op("slice_rows", count, c, std::move(out), {a}, [begin, c](const detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t k = 0; k < self.grad.size(); ++k) g[begin * c + k] += self.grad[k];
  });
}

inline Tensor column(const Tensor& a, std::size_t j) {
  if (j >= a.cols()) throw ShapeError("column " + std::to_string(j) + " of " + to_string(a.shape()));
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = a(i, j);
  return make_op("column", r, 1, std::move(out), {a}, [j, r, c](const detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) g[i * c + j] += self.grad[i];
  });
}

/// Rows of a selected by index (repeats allowed).
inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  const std::size_t c = a.cols();
  std::vector<double> out(index.size() * c);
  for (std::size_t t = 0; t < index.size(); ++t) {
    if (index[t] >= a.rows())
      throw ShapeError("gather_rows: index " + std::to_string(index[t]) + " out of " + to_string(a.shape()));
    std::copy_n(a.values().data() + index[t] * c, c, out.data() + t * c);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_op("gather_rows", index.size(), c, std::move(out), {a}, [idx = std::move(idx), c](const detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t t = 0; t < idx.size(); ++t)
      for (std::size_t j = 0; j < c; ++j) g[idx[t] * c + j] += self.grad[t * c + j];
  });
}

/// Per-row inner product of two equally shaped matrices, as a column.
inline Tensor row_dot(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("row_dot", a, b);
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += a(i, j) * b(i, j);
  return make_op("row_dot", r, 1, std::move(out), {a, b}, [r, c](const detail::Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (an.requires_grad) {
      auto& g = an.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i] * bn.values[i * c + j];
    }
    if (bn.requires_grad) {
      auto& g = bn.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i] * an.values[i * c + j];
    }
  });
}

/// Multiplies row i of a by w(i, 0).
inline Tensor scale_rows(const Tensor& a, const Tensor& w) {
  if (w.cols() != 1 || w.rows() != a.rows())
    throw ShapeError("scale_rows: " + to_string(a.shape()) + " vs " + to_string(w.shape()));
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a(i, j) * w.values()[i];
  return make_op("scale_rows", r, c, std::move(out), {a, w}, [r, c](const detail::Node& self) {
    auto& an = *self.inputs[0];
    auto& wn = *self.inputs[1];
    if (an.requires_grad) {
      auto& g = an.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * wn.values[i];
    }
    if (wn.requires_grad) {
      auto& g = wn.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i] += self.grad[i * c + j] * an.values[i * c + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_op("sum", 1, 1, {s}, {a}, [](const detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& x : g) x += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double n = static_cast<double>(a.size());
  return make_op("mean", 1, 1, {s / n}, {a}, [n](const detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& x : g) x += self.grad[0] / n;
  });
}

// ---------------------------------------------------------------------------
// Softmax family

namespace detail {

// y = softmax over the index set `cols` of row values x; backward helper below.
inline void softmax_segment(const double* x, double* y, std::span<const std::size_t> cols) {
  double mx = -std::numeric_limits<double>::infinity();
  for (auto j : cols) mx = std::max(mx, x[j]);
  double z = 0.0;
  for (auto j : cols) {
    y[j] = std::exp(x[j] - mx);
    z += y[j];
  }
  for (auto j : cols) y[j] /= z;
}

}  // namespace detail

/// Row-wise softmax restricted to mask entries; exactly zero elsewhere.
/// Stabilised by subtracting the row maximum over the masked entries.
inline Tensor masked_softmax(const Tensor& scores, const BitMatrix& mask) {
  if (mask.rows() != scores.rows() || mask.cols() != scores.cols())
    throw ShapeError("masked_softmax: scores " + to_string(scores.shape()) + " vs mask " +
                     to_string(Shape{mask.rows(), mask.cols()}));
  const std::size_t r = scores.rows(), c = scores.cols();
  SparsePattern support(mask);
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    if (support.row(i).empty()) throw DegenerateNeighborhoodError(i, "masked_softmax");
    detail::softmax_segment(scores.values().data() + i * c, out.data() + i * c, support.row(i));
  }
  return make_op("masked_softmax", r, c, std::move(out), {scores},
                 [support = std::move(support), r, c](const detail::Node& self) {
                   auto& g = self.inputs[0]->grad_buffer();
                   for (std::size_t i = 0; i < r; ++i) {
                     const double* y = self.values.data() + i * c;
                     const double* gy = self.grad.data() + i * c;
                     double dot = 0.0;
                     for (auto j : support.row(i)) dot += y[j] * gy[j];
                     for (auto j : support.row(i)) g[i * c + j] += y[j] * (gy[j] - dot);
                   }
                 });
}

/// Unmasked row-wise softmax.
inline Tensor softmax_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  if (c == 0) throw DegenerateNeighborhoodError(0, "softmax_rows");
  std::vector<std::size_t> all(c);
  for (std::size_t j = 0; j < c; ++j) all[j] = j;
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) detail::softmax_segment(a.values().data() + i * c, out.data() + i * c, all);
  return make_op("softmax_rows", r, c, std::move(out), {a}, [r, c](const detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = self.values.data() + i * c;
      const double* gy = self.grad.data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (gy[j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Edge-valued operations over a SparsePattern. An edge tensor has shape
// [nnz x 1] with entries in the pattern's row-major order.

/// e(i,j) = src(i) + dst(j) for every (i,j) in the pattern.
inline Tensor edge_sum(const Tensor& src, const Tensor& dst, std::shared_ptr<const SparsePattern> pattern) {
  if (src.cols() != 1 || dst.cols() != 1 || src.rows() != pattern->rows() || dst.rows() != pattern->cols())
    throw ShapeError("edge_sum: src " + to_string(src.shape()) + ", dst " + to_string(dst.shape()) + " vs pattern " +
                     to_string(Shape{pattern->rows(), pattern->cols()}));
  std::vector<double> out(pattern->nnz());
  const auto cols = pattern->columns();
  for (std::size_t i = 0; i < pattern->rows(); ++i)
    for (std::size_t p = pattern->row_begin(i); p < pattern->row_end(i); ++p)
      out[p] = src.values()[i] + dst.values()[cols[p]];
  return make_op("edge_sum", pattern->nnz(), 1, std::move(out), {src, dst}, [pattern](const detail::Node& self) {
    auto& sn = *self.inputs[0];
    auto& dn = *self.inputs[1];
    const auto cols = pattern->columns();
    if (sn.requires_grad) {
      auto& g = sn.grad_buffer();
      for (std::size_t i = 0; i < pattern->rows(); ++i)
        for (std::size_t p = pattern->row_begin(i); p < pattern->row_end(i); ++p) g[i] += self.grad[p];
    }
    if (dn.requires_grad) {
      auto& g = dn.grad_buffer();
      for (std::size_t p = 0; p < cols.size(); ++p) g[cols[p]] += self.grad[p];
    }
  });
}

/// Softmax of edge values within each pattern row (row-max stabilised).
inline Tensor segment_softmax(const Tensor& edges, std::shared_ptr<const SparsePattern> pattern) {
  if (edges.rows() != pattern->nnz() || edges.cols() != 1)
    throw ShapeError("segment_softmax: edges " + to_string(edges.shape()) + " vs nnz " + std::to_string(pattern->nnz()));
  std::vector<double> out(edges.size());
  const auto x = edges.values();
  for (std::size_t i = 0; i < pattern->rows(); ++i) {
    const std::size_t b = pattern->row_begin(i), e = pattern->row_end(i);
    if (b == e) throw DegenerateNeighborhoodError(i, "segment_softmax");
    double mx = x[b];
    for (std::size_t p = b + 1; p < e; ++p) mx = std::max(mx, x[p]);
    double z = 0.0;
    for (std::size_t p = b; p < e; ++p) z += (out[p] = std::exp(x[p] - mx));
    for (std::size_t p = b; p < e; ++p) out[p] /= z;
  }
  return make_op("segment_softmax", edges.rows(), 1, std::move(out), {edges}, [pattern](const detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < pattern->rows(); ++i) {
      const std::size_t b = pattern->row_begin(i), e = pattern->row_end(i);
      double dot = 0.0;
      for (std::size_t p = b; p < e; ++p) dot += self.values[p] * self.grad[p];
      for (std::size_t p = b; p < e; ++p) g[p] += self.values[p] * (self.grad[p] - dot);
    }
  });
}

/// out(i,:) = sum over (i,j) in pattern of w(i,j) * z(j,:).
inline Tensor edge_aggregate(const Tensor& weights, const Tensor& z, std::shared_ptr<const SparsePattern> pattern) {
  if (weights.rows() != pattern->nnz() || weights.cols() != 1 || z.rows() != pattern->cols())
    throw ShapeError("edge_aggregate: weights " + to_string(weights.shape()) + ", z " + to_string(z.shape()) +
                     " vs pattern " + to_string(Shape{pattern->rows(), pattern->cols()}));
  const std::size_t n = pattern->rows(), d = z.cols();
  std::vector<double> out(n * d, 0.0);
  const auto cols = pattern->columns();
  const auto w = weights.values();
  const auto zv = z.values();
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data() + i * d;
    for (std::size_t p = pattern->row_begin(i); p < pattern->row_end(i); ++p) {
      const double* zr = zv.data() + cols[p] * d;
      for (std::size_t c = 0; c < d; ++c) o[c] += w[p] * zr[c];
    }
  }
  return make_op("edge_aggregate", n, d, std::move(out), {weights, z}, [pattern, n, d](const detail::Node& self) {
    auto& wn = *self.inputs[0];
    auto& zn = *self.inputs[1];
    const auto cols = pattern->columns();
    if (wn.requires_grad) {
      auto& g = wn.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = pattern->row_begin(i); p < pattern->row_end(i); ++p) {
          double acc = 0.0;
          for (std::size_t c = 0; c < d; ++c) acc += self.grad[i * d + c] * zn.values[cols[p] * d + c];
          g[p] += acc;
        }
    }
    if (zn.requires_grad) {
      auto& g = zn.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = pattern->row_begin(i); p < pattern->row_end(i); ++p) {
          const double wp = wn.values[p];
          double* gz = g.data() + cols[p] * d;
          for (std::size_t c = 0; c < d; ++c) gz[c] += wp * self.grad[i * d + c];
        }
    }
  });
}

}  // namespace lsdan
