#pragma once

// Mixture density head. A head row holds 6K + 2 raw values laid out as
//   [pi logits | mu_x | mu_y | log sigma_x | log sigma_y | rho raw | eos logit | eoc logit]
// squashed by softmax / identity / exp / tanh / sigmoid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/core/tape.hpp"

namespace dsd {

inline constexpr double kSigmaFloor = 1e-6;
inline constexpr double kRhoLimit = 1.0 - 1e-6;

inline std::size_t mdn_width(std::size_t k) { return 6 * k + 2; }

struct MdnStep {
  std::vector<double> pi, mu_x, mu_y, sigma_x, sigma_y, rho;
  double eos_prob = 0.5;
  double eoc_prob = 0.5;

  std::size_t components() const noexcept { return pi.size(); }
};

inline MdnStep mdn_step(std::span<const double> row, std::size_t k) {
  if (row.size() != mdn_width(k)) throw ShapeError("MDN head row has the wrong width");
  MdnStep s;
  const double m = *std::max_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k));
  double z = 0.0;
  for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
  for (std::size_t j = 0; j < k; ++j) {
    s.pi.push_back(std::exp(row[j] - m) / z);
    s.mu_x.push_back(row[k + j]);
    s.mu_y.push_back(row[2 * k + j]);
    s.sigma_x.push_back(std::max(std::exp(row[3 * k + j]), kSigmaFloor));
    s.sigma_y.push_back(std::max(std::exp(row[4 * k + j]), kSigmaFloor));
    s.rho.push_back(std::clamp(std::tanh(row[5 * k + j]), -kRhoLimit, kRhoLimit));
  }
  s.eos_prob = ad::sigmoid_scalar(row[6 * k]);
  s.eoc_prob = ad::sigmoid_scalar(row[6 * k + 1]);
  return s;
}

/// log N(x, y | mu, sigma, rho) of the bivariate normal.
inline double log_bivariate_normal(double x, double y, double mx, double my, double sx, double sy, double rho) {
  const double zx = (x - mx) / sx, zy = (y - my) / sy;
  const double omr = 1.0 - rho * rho;
  const double z = zx * zx + zy * zy - 2.0 * rho * zx * zy;
  return -std::log(2.0 * std::numbers::pi) - std::log(sx) - std::log(sy) - 0.5 * std::log(omr) -
         z / (2.0 * omr);
}

/// -log sum_j pi_j N(target | component j), evaluated with log-sum-exp.
inline double mdn_nll(const MdnStep& s, double dx, double dy) {
  double m = -std::numeric_limits<double>::infinity();
  std::vector<double> lp(s.components());
  for (std::size_t j = 0; j < lp.size(); ++j) {
    lp[j] = std::log(s.pi[j]) + log_bivariate_normal(dx, dy, s.mu_x[j], s.mu_y[j], s.sigma_x[j], s.sigma_y[j], s.rho[j]);
    m = std::max(m, lp[j]);
  }
  double acc = 0.0;
  for (double v : lp) acc += std::exp(v - m);
  return -(m + std::log(acc));
}

namespace ad {

/// Fused MDN objective over N head rows and N x 4 targets (dx, dy, eos, eoc).
/// Returns a 1 x 3 row [L_loc, L_eos, L_eoc]; the flag terms are BCE on
/// logits, which equals the probability form without the clipping.
inline Var mdn_losses(Var head, const std::vector<double>& targets, std::size_t k) {
  const std::size_t n = head.rows(), w = mdn_width(k);
  if (head.cols() != w) throw ShapeError("mdn_losses: head width " + std::to_string(head.cols()) +
                                         ", expected " + std::to_string(w));
  if (targets.size() != 4 * n) throw ShapeError("mdn_losses: targets must be N x 4");
  const double* hv = head.value().data();
  std::vector<double> grad(n * w, 0.0);
  double loc = 0.0, eos = 0.0, eoc = 0.0;
  std::vector<double> lp(k), dmx(k), dmy(k), dsx(k), dsy(k), drho(k);
  for (std::size_t t = 0; t < n; ++t) {
    const double* r = hv + t * w;
    double* g = grad.data() + t * w;
    const double x = targets[4 * t], y = targets[4 * t + 1];
    double amax = r[0];
    for (std::size_t j = 1; j < k; ++j) amax = std::max(amax, r[j]);
    double az = 0.0;
    for (std::size_t j = 0; j < k; ++j) az += std::exp(r[j] - amax);
    const double log_az = amax + std::log(az);
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      const double ex = std::exp(r[3 * k + j]), ey = std::exp(r[4 * k + j]);
      const double sx = std::max(ex, kSigmaFloor), sy = std::max(ey, kSigmaFloor);
      const double th = std::tanh(r[5 * k + j]);
      const double rho = std::clamp(th, -kRhoLimit, kRhoLimit);
      const double zx = (x - r[k + j]) / sx, zy = (y - r[2 * k + j]) / sy;
      const double c = 1.0 / (1.0 - rho * rho);
      const double z = zx * zx + zy * zy - 2.0 * rho * zx * zy;
      lp[j] = (r[j] - log_az) - std::log(2.0 * std::numbers::pi) - std::log(sx) - std::log(sy) +
              0.5 * std::log(c) - 0.5 * c * z;
      m = std::max(m, lp[j]);
      dmx[j] = c / sx * (zx - rho * zy);
      dmy[j] = c / sy * (zy - rho * zx);
      dsx[j] = ex >= kSigmaFloor ? -1.0 + c * zx * (zx - rho * zy) : 0.0;
      dsy[j] = ey >= kSigmaFloor ? -1.0 + c * zy * (zy - rho * zx) : 0.0;
      const double dlogn_drho = rho * c - rho * c * c * z + c * zx * zy;
      drho[j] = std::abs(th) < kRhoLimit ? dlogn_drho * (1.0 - th * th) : 0.0;
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += std::exp(lp[j] - m);
    const double lse = m + std::log(acc);
    loc -= lse;
    for (std::size_t j = 0; j < k; ++j) {
      const double gamma = std::exp(lp[j] - lse);
      const double pi = std::exp(r[j] - log_az);
      g[j] = pi - gamma;
      g[k + j] = -gamma * dmx[j];
      g[2 * k + j] = -gamma * dmy[j];
      g[3 * k + j] = -gamma * dsx[j];
      g[4 * k + j] = -gamma * dsy[j];
      g[5 * k + j] = -gamma * drho[j];
    }
    const double ze = r[6 * k], zc = r[6 * k + 1];
    const double ye = targets[4 * t + 2], yc = targets[4 * t + 3];
    eos += softplus_scalar(ze) - ye * ze;
    eoc += softplus_scalar(zc) - yc * zc;
    g[6 * k] = sigmoid_scalar(ze) - ye;
    g[6 * k + 1] = sigmoid_scalar(zc) - yc;
  }
  Tape& tp = head.tape();
  const auto ih = head.id();
  return tp.push(1, 3, {loc, eos, eoc}, tp.needs_grad(ih),
                 [ih, grad = std::move(grad), n, w](Tape& t, std::uint32_t self) {
                   const double* go = t.grad_ptr(self);
                   double* gh = t.grad_ptr(ih);
                   for (std::size_t r = 0; r < n; ++r) {
                     const double* g = grad.data() + r * w;
                     double* out = gh + r * w;
                     const std::size_t k = (w - 2) / 6;
                     for (std::size_t c = 0; c < 6 * k; ++c) out[c] += go[0] * g[c];
                     out[6 * k] += go[1] * g[6 * k];
                     out[6 * k + 1] += go[2] * g[6 * k + 1];
                   }
                 });
}

}  // namespace ad

/// Draws one (dx, dy) from the mixture. Temperature 0 takes the most likely
/// component's mean; otherwise pi is sharpened by 1/temperature and sigma
/// scaled by sqrt(temperature).
inline std::pair<double, double> sample_mdn(const MdnStep& s, std::mt19937_64& rng, double temperature = 1.0) {
  const std::size_t k = s.components();
  if (temperature <= 0.0) {
    const auto j = static_cast<std::size_t>(std::max_element(s.pi.begin(), s.pi.end()) - s.pi.begin());
    return {s.mu_x[j], s.mu_y[j]};
  }
  std::vector<double> w(k);
  double z = 0.0;
  for (std::size_t j = 0; j < k; ++j) z += (w[j] = std::pow(s.pi[j], 1.0 / temperature));
  std::uniform_real_distribution<double> u(0.0, z);
  double r = u(rng), acc = 0.0;
  std::size_t j = 0;
  for (; j + 1 < k; ++j) {
    acc += w[j];
    if (r < acc) break;
  }
  std::normal_distribution<double> nd(0.0, 1.0);
  const double e1 = nd(rng), e2 = nd(rng);
  const double st = std::sqrt(temperature);
  const double sx = s.sigma_x[j] * st, sy = s.sigma_y[j] * st, rho = s.rho[j];
  return {s.mu_x[j] + sx * e1, s.mu_y[j] + sy * (rho * e1 + std::sqrt(1.0 - rho * rho) * e2)};
}

}  // namespace dsd
