#pragma once

// Reverse-mode differentiation over row-major float64 matrices.
//
// A Tape records every operation as a node holding its forward value and a
// closure that pushes the node's gradient into its inputs. Parameters enter
// the tape as leaves that alias the Parameter's storage, so backward() writes
// their gradients in place. Nodes are visited once, in reverse creation order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/core/params.hpp"
#include "dsd/core/tensor.hpp"

namespace dsd::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const { return rows() * cols(); }

  std::span<const double> value() const;
  /// Gradient after Tape::backward; empty if the node does not require grad.
  std::span<const double> grad() const;
  double item() const;
  Tensor tensor() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that does not require a gradient.
  Var constant(std::size_t rows, std::size_t cols, std::vector<double> value) {
    check_size(rows, cols, value.size());
    return push(rows, cols, std::move(value), false, nullptr);
  }
  Var constant(const Tensor& t) {
    return constant(t.rows(), t.cols(), t.storage());
  }
  Var scalar(double v) { return constant(1, 1, {v}); }

  /// Leaf with its own gradient buffer (gradient checks, latent optimization).
  Var input(std::size_t rows, std::size_t cols, std::vector<double> value) {
    check_size(rows, cols, value.size());
    return push(rows, cols, std::move(value), true, nullptr);
  }

  /// Leaf aliasing a Parameter; repeated calls return the same node.
  Var param(Parameter& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
    Node n;
    n.rows = p.rows;
    n.cols = p.cols;
    n.ext_value = p.value.data();
    n.ext_grad = p.grad.data();
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
    param_ids_.emplace(&p, id);
    return Var(this, id);
  }

  /// Records an operation node. `fn` may be null when no input needs grad.
  Var push(std::size_t rows, std::size_t cols, std::vector<double> value, bool needs_grad,
           Backward fn) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  void backward(Var root) {
    if (&root.tape() != this) throw InvariantError("backward root belongs to another tape");
    if (root.size() != 1) throw ShapeError("backward root must be a scalar");
    for (auto& n : nodes_) {
      if (n.needs_grad && n.ext_grad == nullptr) n.grad.assign(n.rows * n.cols, 0.0);
    }
    Node& r = nodes_[root.id()];
    if (!r.needs_grad) return;
    grad_ptr(root.id())[0] += 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.backward) n.backward(*this, static_cast<std::uint32_t>(i));
    }
  }

  std::size_t rows(std::uint32_t id) const { return nodes_[id].rows; }
  std::size_t cols(std::uint32_t id) const { return nodes_[id].cols; }
  bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }

  const double* value_ptr(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.ext_value != nullptr ? n.ext_value : n.value.data();
  }
  /// Null when the node does not require grad.
  double* grad_ptr(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return nullptr;
    return n.ext_grad != nullptr ? n.ext_grad : n.grad.data();
  }
  bool has_grad_buffer(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.needs_grad && (n.ext_grad != nullptr || !n.grad.empty());
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    const double* ext_value = nullptr;
    double* ext_grad = nullptr;
    bool needs_grad = false;
    Backward backward;
  };

  static void check_size(std::size_t rows, std::size_t cols, std::size_t n) {
    if (rows * cols != n) {
      throw ShapeError("leaf of shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " given " + std::to_string(n) + " values");
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_ids_;
};

inline std::size_t Var::rows() const { return tape_->rows(id_); }
inline std::size_t Var::cols() const { return tape_->cols(id_); }
inline std::span<const double> Var::value() const {
  return {tape_->value_ptr(id_), rows() * cols()};
}
inline std::span<const double> Var::grad() const {
  if (!tape_->has_grad_buffer(id_)) return {};
  return {tape_->grad_ptr(id_), rows() * cols()};
}
inline double Var::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar");
  return value()[0];
}
inline Tensor Var::tensor() const {
  auto v = value();
  return Tensor::matrix(rows(), cols(), std::vector<double>(v.begin(), v.end()));
}

namespace detail {

inline std::string shape_str(const Var& v) {
  return std::to_string(v.rows()) + "x" + std::to_string(v.cols());
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
  }
}

inline void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw InvariantError("operands recorded on different tapes");
}

// y += a * x
inline void axpy(double* y, const double* x, double a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise unary maps. `df` receives (x, y) and returns dy/dx.

template <class F, class DF>
Var unary(Var a, F f, DF df) {
  Tape& t = a.tape();
  const auto n = a.size();
  const double* x = a.value().data();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = f(x[i]);
  const auto ia = a.id();
  return t.push(a.rows(), a.cols(), std::move(y), t.needs_grad(ia),
                [ia, n, df](Tape& tp, std::uint32_t self) {
                  const double* g = tp.grad_ptr(self);
                  const double* xv = tp.value_ptr(ia);
                  const double* yv = tp.value_ptr(self);
                  double* ga = tp.grad_ptr(ia);
                  for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * df(xv[i], yv[i]);
                });
}

inline Var neg(Var a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}
inline Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}
inline Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}
inline Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}
inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline Var sigmoid(Var a) {
  return unary(a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}
/// log(1 + e^x), stable for large |x|.
inline double softplus_scalar(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline Var softplus(Var a) {
  return unary(a, softplus_scalar, [](double x, double) { return sigmoid_scalar(x); });
}
inline Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
/// max(x, lo); gradient passes only where x > lo.
inline Var clamp_min(Var a, double lo) {
  return unary(a, [lo](double x) { return x > lo ? x : lo; },
               [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Elementwise binary ops on equal shapes.

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  Tape& t = a.tape();
  const auto n = a.size();
  std::vector<double> y(n);
  const double* x1 = a.value().data();
  const double* x2 = b.value().data();
  for (std::size_t i = 0; i < n; ++i) y[i] = x1[i] + x2[i];
  const auto ia = a.id(), ib = b.id();
  return t.push(a.rows(), a.cols(), std::move(y), t.needs_grad(ia) || t.needs_grad(ib),
                [ia, ib, n](Tape& tp, std::uint32_t self) {
                  const double* g = tp.grad_ptr(self);
                  if (double* ga = tp.grad_ptr(ia)) detail::axpy(ga, g, 1.0, n);
                  if (double* gb = tp.grad_ptr(ib)) detail::axpy(gb, g, 1.0, n);
                });
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  Tape& t = a.tape();
  const auto n = a.size();
  std::vector<double> y(n);
  const double* x1 = a.value().data();
  const double* x2 = b.value().data();
  for (std::size_t i = 0; i < n; ++i) y[i] = x1[i] - x2[i];
  const auto ia = a.id(), ib = b.id();
  return t.push(a.rows(), a.cols(), std::move(y), t.needs_grad(ia) || t.needs_grad(ib),
                [ia, ib, n](Tape& tp, std::uint32_t self) {
                  const double* g = tp.grad_ptr(self);
                  if (double* ga = tp.grad_ptr(ia)) detail::axpy(ga, g, 1.0, n);
                  if (double* gb = tp.grad_ptr(ib)) detail::axpy(gb, g, -1.0, n);
                });
}

inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "mul");
  Tape& t = a.tape();
  const auto n = a.size();
  std::vector<double> y(n);
  const double* x1 = a.value().data();
  const double* x2 = b.value().data();
  for (std::size_t i = 0; i < n; ++i) y[i] = x1[i] * x2[i];
  const auto ia = a.id(), ib = b.id();
  return t.push(a.rows(), a.cols(), std::move(y), t.needs_grad(ia) || t.needs_grad(ib),
                [ia, ib, n](Tape& tp, std::uint32_t self) {
                  const double* g = tp.grad_ptr(self);
                  const double* va = tp.value_ptr(ia);
                  const double* vb = tp.value_ptr(ib);
                  if (double* ga = tp.grad_ptr(ia))
                    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * vb[i];
                  if (double* gb = tp.grad_ptr(ib))
                    for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * va[i];
                });
}

inline Var div(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "div");
  Tape& t = a.tape();
  const auto n = a.size();
  std::vector<double> y(n);
  const double* x1 = a.value().data();
  const double* x2 = b.value().data();
  for (std::size_t i = 0; i < n; ++i) y[i] = x1[i] / x2[i];
  const auto ia = a.id(), ib = b.id();
  return t.push(a.rows(), a.cols(), std::move(y), t.needs_grad(ia) || t.needs_grad(ib),
                [ia, ib, n](Tape& tp, std::uint32_t self) {
                  const double* g = tp.grad_ptr(self);
                  const double* vb = tp.value_ptr(ib);
                  const double* vy = tp.value_ptr(self);
                  if (double* ga = tp.grad_ptr(ia))
                    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / vb[i];
                  if (double* gb = tp.grad_ptr(ib))
                    for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i] * vy[i] / vb[i];
                });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }

/// a (r x c) + row (1 x c), broadcast over rows.
inline Var add_row(Var a, Var row) {
  detail::require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols())
    throw ShapeError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " +
                     detail::shape_str(row));
  Tape& t = a.tape();
  const auto r = a.rows(), c = a.cols();
  std::vector<double> y(a.value().begin(), a.value().end());
  const double* b = row.value().data();
  for (std::size_t i = 0; i < r; ++i) detail::axpy(y.data() + i * c, b, 1.0, c);
  const auto ia = a.id(), ib = row.id();
  return t.push(r, c, std::move(y), t.needs_grad(ia) || t.needs_grad(ib),
                [ia, ib, r, c](Tape& tp, std::uint32_t self) {
                  const double* g = tp.grad_ptr(self);
                  if (double* ga = tp.grad_ptr(ia)) detail::axpy(ga, g, 1.0, r * c);
                  if (double* gb = tp.grad_ptr(ib))
                    for (std::size_t i = 0; i < r; ++i) detail::axpy(gb, g + i * c, 1.0, c);
                });
}

/// a (r x c) * col (r x 1), broadcast over columns.
inline Var mul_col(Var a, Var col) {
  detail::require_same_tape(a, col);
  if (col.cols() != 1 || col.rows() != a.rows())
    throw ShapeError("mul_col: expected " + std::to_string(a.rows()) + "x1 column, got " +
                     detail::shape_str(col));
  Tape& t = a.tape();
  const auto r = a.rows(), c = a.cols();
  std::vector<double> y(r * c);
  const double* x = a.value().data();
  const double* s = col.value().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] = x[i * c + j] * s[i];
  const auto ia = a.id(), ic = col.id();
  return t.push(r, c, std::move(y), t.needs_grad(ia) || t.needs_grad(ic),
                [ia, ic, r, c](Tape& tp, std::uint32_t self) {
                  const double* g = tp.grad_ptr(self);
                  const double* x = tp.value_ptr(ia);
                  const double* s = tp.value_ptr(ic);
                  if (double* ga = tp.grad_ptr(ia))
                    for (std::size_t i = 0; i < r; ++i) detail::axpy(ga + i * c, g + i * c, s[i], c);
                  if (double* gc = tp.grad_ptr(ic))
                    for (std::size_t i = 0; i < r; ++i) {
                      double acc = 0.0;
                      for (std::size_t j = 0; j < c; ++j) acc += g[i * c + j] * x[i * c + j];
                      gc[i] += acc;
                    }
                });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {

// C (m x n) += A (m x k) * B (k x n)
inline void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) axpy(C + i * n, B + p * n, A[i * k + p], n);
}

// C (m x k) += G (m x n) * B^T, B is (k x n)
inline void gemm_nt(const double* G, const double* B, double* C, std::size_t m, std::size_t n,
                    std::size_t k) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double acc = 0.0;
      const double* g = G + i * n;
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) acc += g[j] * b[j];
      C[i * k + p] += acc;
    }
}

// C (k x n) += A^T G, A is (m x k), G is (m x n)
inline void gemm_tn(const double* A, const double* G, double* C, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) axpy(C + p * n, G + i * n, A[i * k + p], n);
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + detail::shape_str(a) + " * " + detail::shape_str(b));
  Tape& t = a.tape();
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> y(m * n, 0.0);
  detail::gemm_nn(a.value().data(), b.value().data(), y.data(), m, k, n);
  const auto ia = a.id(), ib = b.id();
  return t.push(m, n, std::move(y), t.needs_grad(ia) || t.needs_grad(ib),
                [ia, ib, m, k, n](Tape& tp, std::uint32_t self) {
                  const double* g = tp.grad_ptr(self);
                  if (double* ga = tp.grad_ptr(ia)) detail::gemm_nt(g, tp.value_ptr(ib), ga, m, n, k);
                  if (double* gb = tp.grad_ptr(ib)) detail::gemm_tn(tp.value_ptr(ia), g, gb, m, k, n);
                });
}

/// x (T x in) * W (in x out) + b (1 x out)
inline Var affine(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

inline Var transpose(Var a) {
  Tape& t = a.tape();
  const auto r = a.rows(), c = a.cols();
  std::vector<double> y(r * c);
  const double* x = a.value().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = x[i * c + j];
  const auto ia = a.id();
  return t.push(c, r, std::move(y), t.needs_grad(ia), [ia, r, c](Tape& tp, std::uint32_t self) {
    const double* g = tp.grad_ptr(self);
    double* ga = tp.grad_ptr(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  Tape& t = a.tape();
  double s = 0.0;
  for (double v : a.value()) s += v;
  const auto ia = a.id();
  const auto n = a.size();
  return t.push(1, 1, {s}, t.needs_grad(ia), [ia, n](Tape& tp, std::uint32_t self) {
    const double g = tp.grad_ptr(self)[0];
    double* ga = tp.grad_ptr(ia);
    for (std::size_t i = 0; i < n; ++i) ga[i] += g;
  });
}

inline Var squared_norm(Var a) {
  Tape& t = a.tape();
  double s = 0.0;
  for (double v : a.value()) s += v * v;
  const auto ia = a.id();
  const auto n = a.size();
  return t.push(1, 1, {s}, t.needs_grad(ia), [ia, n](Tape& tp, std::uint32_t self) {
    const double g = tp.grad_ptr(self)[0];
    const double* x = tp.value_ptr(ia);
    double* ga = tp.grad_ptr(ia);
    for (std::size_t i = 0; i < n; ++i) ga[i] += 2.0 * g * x[i];
  });
}

/// Sum of a list of scalars (or equal-shaped values) as one node.
inline Var add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw InvariantError("add_n of empty list");
  Tape& t = xs.front().tape();
  const auto r = xs.front().rows(), c = xs.front().cols();
  std::vector<double> y(r * c, 0.0);
  std::vector<std::uint32_t> ids;
  bool ng = false;
  for (const Var& x : xs) {
    detail::require_same_shape(xs.front(), x, "add_n");
    detail::axpy(y.data(), x.value().data(), 1.0, r * c);
    ids.push_back(x.id());
    ng = ng || t.needs_grad(x.id());
  }
  return t.push(r, c, std::move(y), ng, [ids = std::move(ids), n = r * c](Tape& tp, std::uint32_t self) {
    const double* g = tp.grad_ptr(self);
    for (auto id : ids)
      if (double* gi = tp.grad_ptr(id)) detail::axpy(gi, g, 1.0, n);
  });
}

/// Row-wise log-sum-exp: (r x c) -> (r x 1).
inline Var logsumexp_rows(Var a) {
  Tape& t = a.tape();
  const auto r = a.rows(), c = a.cols();
  const double* x = a.value().data();
  std::vector<double> y(r);
  for (std::size_t i = 0; i < r; ++i) {
    double m = x[i * c];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, x[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x[i * c + j] - m);
    y[i] = m + std::log(s);
  }
  const auto ia = a.id();
  return t.push(r, 1, std::move(y), t.needs_grad(ia), [ia, r, c](Tape& tp, std::uint32_t self) {
    const double* g = tp.grad_ptr(self);
    const double* x = tp.value_ptr(ia);
    const double* y = tp.value_ptr(self);
    double* ga = tp.grad_ptr(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i] * std::exp(x[i * c + j] - y[i]);
  });
}

inline Var log_softmax_rows(Var a) {
  Tape& t = a.tape();
  const auto r = a.rows(), c = a.cols();
  const double* x = a.value().data();
  std::vector<double> y(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double m = x[i * c];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, x[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x[i * c + j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] = x[i * c + j] - lse;
  }
  const auto ia = a.id();
  return t.push(r, c, std::move(y), t.needs_grad(ia), [ia, r, c](Tape& tp, std::uint32_t self) {
    const double* g = tp.grad_ptr(self);
    const double* y = tp.value_ptr(self);
    double* ga = tp.grad_ptr(ia);
    for (std::size_t i = 0; i < r; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        ga[i * c + j] += g[i * c + j] - std::exp(y[i * c + j]) * gs;
    }
  });
}

inline Var softmax_rows(Var a) {
  Tape& t = a.tape();
  const auto r = a.rows(), c = a.cols();
  const double* x = a.value().data();
  std::vector<double> y(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double m = x[i * c];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, x[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (y[i * c + j] = std::exp(x[i * c + j] - m));
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] /= s;
  }
  const auto ia = a.id();
  return t.push(r, c, std::move(y), t.needs_grad(ia), [ia, r, c](Tape& tp, std::uint32_t self) {
    const double* g = tp.grad_ptr(self);
    const double* y = tp.value_ptr(self);
    double* ga = tp.grad_ptr(ia);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Structural ops

inline Var reshape(Var a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.size())
    throw ShapeError("reshape " + detail::shape_str(a) + " to " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  Tape& t = a.tape();
  std::vector<double> y(a.value().begin(), a.value().end());
  const auto ia = a.id();
  const auto n = a.size();
  return t.push(rows, cols, std::move(y), t.needs_grad(ia), [ia, n](Tape& tp, std::uint32_t self) {
    detail::axpy(tp.grad_ptr(ia), tp.grad_ptr(self), 1.0, n);
  });
}

inline Var slice_rows(Var a, std::size_t r0, std::size_t count) {
  if (r0 + count > a.rows() || count == 0)
    throw ShapeError("slice_rows [" + std::to_string(r0) + ", +" + std::to_string(count) +
                     ") of " + detail::shape_str(a));
  Tape& t = a.tape();
  const auto c = a.cols();
  const double* x = a.value().data() + r0 * c;
  std::vector<double> y(x, x + count * c);
  const auto ia = a.id();
  return t.push(count, c, std::move(y), t.needs_grad(ia),
                [ia, r0, count, c](Tape& tp, std::uint32_t self) {
                  detail::axpy(tp.grad_ptr(ia) + r0 * c, tp.grad_ptr(self), 1.0, count * c);
                });
}

inline Var slice_cols(Var a, std::size_t c0, std::size_t count) {
  if (c0 + count > a.cols() || count == 0)
    throw ShapeError("slice_cols [" + std::to_string(c0) + ", +" + std::to_string(count) +
                     ") of " + detail::shape_str(a));
  Tape& t = a.tape();
  const auto r = a.rows(), c = a.cols();
  const double* x = a.value().data();
  std::vector<double> y(r * count);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) y[i * count + j] = x[i * c + c0 + j];
  const auto ia = a.id();
  return t.push(r, count, std::move(y), t.needs_grad(ia),
                [ia, r, c, c0, count](Tape& tp, std::uint32_t self) {
                  const double* g = tp.grad_ptr(self);
                  double* ga = tp.grad_ptr(ia);
                  for (std::size_t i = 0; i < r; ++i)
                    detail::axpy(ga + i * c + c0, g + i * count, 1.0, count);
                });
}

inline Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw InvariantError("concat_cols of empty list");
  Tape& t = xs.front().tape();
  const auto r = xs.front().rows();
  std::size_t c = 0;
  bool ng = false;
  std::vector<std::pair<std::uint32_t, std::size_t>> parts;
  for (const Var& x : xs) {
    if (x.rows() != r) throw ShapeError("concat_cols: row mismatch");
    parts.emplace_back(x.id(), x.cols());
    c += x.cols();
    ng = ng || t.needs_grad(x.id());
  }
  std::vector<double> y(r * c);
  std::size_t off = 0;
  for (const Var& x : xs) {
    const auto xc = x.cols();
    const double* v = x.value().data();
    for (std::size_t i = 0; i < r; ++i)
      std::copy(v + i * xc, v + (i + 1) * xc, y.begin() + static_cast<std::ptrdiff_t>(i * c + off));
    off += xc;
  }
  return t.push(r, c, std::move(y), ng, [parts = std::move(parts), r, c](Tape& tp, std::uint32_t self) {
    const double* g = tp.grad_ptr(self);
    std::size_t off = 0;
    for (auto [id, xc] : parts) {
      if (double* gx = tp.grad_ptr(id))
        for (std::size_t i = 0; i < r; ++i) detail::axpy(gx + i * xc, g + i * c + off, 1.0, xc);
      off += xc;
    }
  });
}

inline Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw InvariantError("concat_rows of empty list");
  Tape& t = xs.front().tape();
  const auto c = xs.front().cols();
  std::size_t r = 0;
  bool ng = false;
  std::vector<std::pair<std::uint32_t, std::size_t>> parts;
  std::vector<double> y;
  for (const Var& x : xs) {
    if (x.cols() != c) throw ShapeError("concat_rows: column mismatch");
    parts.emplace_back(x.id(), x.size());
    r += x.rows();
    ng = ng || t.needs_grad(x.id());
    y.insert(y.end(), x.value().begin(), x.value().end());
  }
  return t.push(r, c, std::move(y), ng, [parts = std::move(parts)](Tape& tp, std::uint32_t self) {
    const double* g = tp.grad_ptr(self);
    std::size_t off = 0;
    for (auto [id, n] : parts) {
      if (double* gx = tp.grad_ptr(id)) detail::axpy(gx, g + off, 1.0, n);
      off += n;
    }
  });
}

/// Output row i is input row idx[i].
inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
  Tape& t = a.tape();
  const auto c = a.cols();
  const double* x = a.value().data();
  std::vector<double> y(idx.size() * c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy(x + idx[i] * c, x + (idx[i] + 1) * c, y.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  const auto ia = a.id();
  const auto rows = idx.size();
  return t.push(rows, c, std::move(y), t.needs_grad(ia),
                [ia, c, idx = std::move(idx)](Tape& tp, std::uint32_t self) {
                  const double* g = tp.grad_ptr(self);
                  double* ga = tp.grad_ptr(ia);
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    detail::axpy(ga + idx[i] * c, g + i * c, 1.0, c);
                });
}

inline Var reverse_rows(Var a) {
  std::vector<std::size_t> idx(a.rows());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = idx.size() - 1 - i;
  return gather_rows(a, std::move(idx));
}

}  // namespace dsd::ad
