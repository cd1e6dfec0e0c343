#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/core/tensor.hpp"

namespace dsd {

/// gamma * a + (1 - gamma) * b, for writer DSDs or writer-character DSDs.
inline std::vector<double> interpolate_writer(const std::vector<double>& a, const std::vector<double>& b, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvariantError("interpolation weight must lie in [0, 1]");
  if (a.size() != b.size()) throw ShapeError("interpolate_writer: length mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = gamma * a[i] + (1.0 - gamma) * b[i];
  return out;
}

/// sum_i r_i C_i over four corner matrices.
inline Tensor interpolate_char_bilinear(const std::array<Tensor, 4>& corners, const std::array<double, 4>& r) {
  double sum = 0.0;
  for (double v : r) {
    if (v < 0.0) throw InvariantError("bilinear weights must be non-negative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvariantError("bilinear weights must sum to 1");
  Tensor out = Tensor::matrix(corners[0].rows(), corners[0].cols(), std::vector<double>(corners[0].size(), 0.0));
  for (std::size_t k = 0; k < 4; ++k) {
    if (corners[k].rows() != out.rows() || corners[k].cols() != out.cols())
      throw ShapeError("interpolate_char_bilinear: corner shapes differ");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += r[k] * corners[k][i];
  }
  return out;
}

/// Weights for grid point (u, v) in [0, 1]^2 with corners ordered
/// (0,0), (1,0), (0,1), (1,1).
inline std::array<double, 4> bilinear_weights(double u, double v) {
  if (!(u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0)) throw InvariantError("grid coordinates must lie in [0, 1]");
  return {(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v};
}

}  // namespace dsd
