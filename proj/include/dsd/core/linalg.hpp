#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/core/tape.hpp"
#include "dsd/core/tensor.hpp"

namespace dsd {

/// Pivots smaller than this fraction of the largest input magnitude are singular.
inline constexpr double kSingularPivotRatio = 1e-12;

/// LU factorization with partial pivoting, stored compactly (unit-lower L below
/// the diagonal, U on and above). `perm[i]` is the source row of row i.
struct LuDecomposition {
  std::size_t n = 0;
  std::vector<double> lu;
  std::vector<std::size_t> perm;

  static LuDecomposition factor(std::span<const double> a, std::size_t n) {
    if (a.size() != n * n) throw ShapeError("LU: expected square " + std::to_string(n) + " matrix");
    LuDecomposition d;
    d.n = n;
    d.lu.assign(a.begin(), a.end());
    d.perm.resize(n);
    for (std::size_t i = 0; i < n; ++i) d.perm[i] = i;
    double max_abs = 0.0;
    for (double v : a) max_abs = std::max(max_abs, std::abs(v));
    const double tol = kSingularPivotRatio * max_abs;
    auto& m = d.lu;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t p = k;
      double best = std::abs(m[k * n + k]);
      for (std::size_t i = k + 1; i < n; ++i) {
        if (std::abs(m[i * n + k]) > best) {
          best = std::abs(m[i * n + k]);
          p = i;
        }
      }
      if (!(best > tol) || max_abs == 0.0) {
        throw SingularMatrixError("matrix is singular: pivot " + std::to_string(best) +
                                  " at column " + std::to_string(k));
      }
      if (p != k) {
        for (std::size_t j = 0; j < n; ++j) std::swap(m[k * n + j], m[p * n + j]);
        std::swap(d.perm[k], d.perm[p]);
      }
      const double piv = m[k * n + k];
      for (std::size_t i = k + 1; i < n; ++i) {
        const double f = m[i * n + k] / piv;
        m[i * n + k] = f;
        if (f == 0.0) continue;
        for (std::size_t j = k + 1; j < n; ++j) m[i * n + j] -= f * m[k * n + j];
      }
    }
    return d;
  }

  /// Solves A x = b in place for one right-hand side.
  void solve(std::span<double> b) const {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = b[perm[i]];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < i; ++j) x[i] -= lu[i * n + j] * x[j];
    for (std::size_t i = n; i-- > 0;) {
      for (std::size_t j = i + 1; j < n; ++j) x[i] -= lu[i * n + j] * x[j];
      x[i] /= lu[i * n + i];
    }
    std::copy(x.begin(), x.end(), b.begin());
  }

  std::vector<double> inverse() const {
    std::vector<double> inv(n * n, 0.0);
    std::vector<double> col(n);
    for (std::size_t j = 0; j < n; ++j) {
      std::fill(col.begin(), col.end(), 0.0);
      col[j] = 1.0;
      solve(col);
      for (std::size_t i = 0; i < n; ++i) inv[i * n + j] = col[i];
    }
    return inv;
  }
};

/// Inverse of a square matrix via partially pivoted LU.
/// Throws SingularMatrixError when a pivot falls below 1e-12 * max|entry|.
inline Tensor mat_inverse(const Tensor& m) {
  if (m.rank() != 2 || m.shape()[0] != m.shape()[1])
    throw ShapeError("mat_inverse: matrix must be square");
  const auto n = m.shape()[0];
  return Tensor::matrix(n, n, LuDecomposition::factor(m.data(), n).inverse());
}

namespace ad {

/// Differentiable inverse; backward applies dA = -A^{-T} G A^{-T}.
inline Var inverse(Var a) {
  if (a.rows() != a.cols()) throw ShapeError("inverse: matrix must be square");
  Tape& t = a.tape();
  const auto n = a.rows();
  auto inv = LuDecomposition::factor(a.value(), n).inverse();
  const auto ia = a.id();
  return t.push(n, n, std::move(inv), t.needs_grad(ia), [ia, n](Tape& tp, std::uint32_t self) {
    const double* g = tp.grad_ptr(self);
    const double* y = tp.value_ptr(self);
    double* ga = tp.grad_ptr(ia);
    // tmp = Y^T G ; ga -= tmp Y^T
    std::vector<double> tmp(n * n, 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i) {
        const double yki = y[k * n + i];
        if (yki == 0.0) continue;
        detail::axpy(tmp.data() + i * n, g + k * n, yki, n);
      }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += tmp[i * n + k] * y[j * n + k];
        ga[i * n + j] -= acc;
      }
  });
}

}  // namespace ad
}  // namespace dsd
