#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/core/tape.hpp"
#include "dsd/model/dsd_model.hpp"
#include "dsd/model/mdn.hpp"

namespace dsd {

inline constexpr double kBceEpsilon = 1e-7;

/// Binary cross-entropy on probabilities clipped to [eps, 1 - eps].
inline double bce(double p, double y) {
  const double q = std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

struct FlagLosses {
  double eos = 0.0;
  double eoc = 0.0;
};

/// Summed BCE of predicted eos/eoc probabilities against targets (N x 4 rows
/// of dx, dy, eos, eoc).
inline FlagLosses loss_flags(const std::vector<MdnStep>& steps, const std::vector<std::array<double, 4>>& targets) {
  if (steps.size() != targets.size()) throw ShapeError("loss_flags: length mismatch");
  FlagLosses f;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    f.eos += bce(steps[t].eos_prob, targets[t][2]);
    f.eoc += bce(steps[t].eoc_prob, targets[t][3]);
  }
  return f;
}

inline double loss_loc(const std::vector<MdnStep>& steps, const std::vector<std::array<double, 4>>& targets) {
  if (steps.size() != targets.size()) throw ShapeError("loss_loc: length mismatch");
  double l = 0.0;
  for (std::size_t t = 0; t < steps.size(); ++t) l += mdn_nll(steps[t], targets[t][0], targets[t][1]);
  return l;
}

/// Sum of squared distances of each candidate from their mean.
inline double loss_w_consistency(const std::vector<std::vector<double>>& candidates) {
  if (candidates.empty()) throw InvariantError("loss_w_consistency: no candidates");
  const std::size_t n = candidates.front().size();
  std::vector<double> mean(n, 0.0);
  for (const auto& c : candidates) {
    if (c.size() != n) throw ShapeError("loss_w_consistency: length mismatch");
    for (std::size_t i = 0; i < n; ++i) mean[i] += c[i];
  }
  for (double& m : mean) m /= static_cast<double>(candidates.size());
  double l = 0.0;
  for (const auto& c : candidates)
    for (std::size_t i = 0; i < n; ++i) l += (mean[i] - c[i]) * (mean[i] - c[i]);
  return l;
}

inline double loss_wct_reconstruction(const std::vector<std::vector<double>>& original,
                                      const std::vector<std::vector<double>>& reconstructed) {
  if (original.size() != reconstructed.size()) throw ShapeError("loss_wct_reconstruction: length mismatch");
  double l = 0.0;
  for (std::size_t t = 0; t < original.size(); ++t) {
    if (original[t].size() != reconstructed[t].size()) throw ShapeError("loss_wct_reconstruction: width mismatch");
    for (std::size_t i = 0; i < original[t].size(); ++i) {
      const double d = original[t][i] - reconstructed[t][i];
      l += d * d;
    }
  }
  return l;
}

namespace ad {

inline Var loss_w_consistency(const std::vector<Var>& candidates) {
  Var mean = mean_of(candidates);
  std::vector<Var> terms;
  for (const auto& c : candidates) terms.push_back(squared_norm(sub(mean, c)));
  return add_n(terms);
}

inline Var loss_wct_reconstruction(Var original, Var reconstructed) {
  return squared_norm(sub(original, reconstructed));
}

}  // namespace ad

}  // namespace dsd
