#pragma once

// Bound-constrained limited-memory quasi-Newton minimisation. Each iteration
// fixes the variables held at a bound by the gradient, takes an L-BFGS
// direction in the remaining free subspace, and backtracks along the
// projected path until the Armijo condition holds.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "dsd/core/error.hpp"

namespace dsd {

struct LbfgsbOptions {
  std::size_t memory = 10;
  std::size_t max_iterations = 500;
  double gradient_tolerance = 1e-6;  // on the projected gradient, infinity norm
  double armijo = 1e-4;
};

struct LbfgsbResult {
  std::vector<double> x;
  double objective = 0.0;
  double projected_gradient = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// `f` returns the objective and writes the gradient into its second argument.
using ObjectiveFn = std::function<double(const std::vector<double>&, std::vector<double>&)>;

inline double projected_gradient_norm(const std::vector<double>& x, const std::vector<double>& g,
                                      const std::vector<double>& lo, const std::vector<double>& hi) {
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(std::clamp(x[i] - g[i], lo[i], hi[i]) - x[i]));
  return m;
}

inline LbfgsbResult minimize_lbfgsb(const ObjectiveFn& f, std::vector<double> x, const std::vector<double>& lo,
                                    const std::vector<double>& hi, const LbfgsbOptions& opt = {}) {
  const std::size_t n = x.size();
  if (lo.size() != n || hi.size() != n) throw ShapeError("lbfgsb: bound size mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(lo[i] <= hi[i])) throw InvariantError("lbfgsb: lower bound above upper bound");
    x[i] = std::clamp(x[i], lo[i], hi[i]);
  }
  std::vector<double> g(n), gn(n), d(n), xn(n);
  double fx = f(x, g);
  std::deque<std::vector<double>> S, Y;
  std::deque<double> rho;
  LbfgsbResult r;
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };

  for (r.iterations = 0; r.iterations < opt.max_iterations; ++r.iterations) {
    r.projected_gradient = projected_gradient_norm(x, g, lo, hi);
    if (r.projected_gradient < opt.gradient_tolerance) {
      r.converged = true;
      break;
    }
    std::vector<bool> free(n);
    for (std::size_t i = 0; i < n; ++i)
      free[i] = !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0));
    // Two-loop recursion restricted to the free variables.
    for (std::size_t i = 0; i < n; ++i) d[i] = free[i] ? -g[i] : 0.0;
    auto fdot = [&](const std::vector<double>& a, const std::vector<double>& b) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (free[i]) s += a[i] * b[i];
      return s;
    };
    std::vector<double> alpha(S.size());
    for (std::size_t k = S.size(); k-- > 0;) {
      alpha[k] = rho[k] * fdot(S[k], d);
      for (std::size_t i = 0; i < n; ++i)
        if (free[i]) d[i] -= alpha[k] * Y[k][i];
    }
    if (!S.empty()) {
      const double gamma = dot(S.back(), Y.back()) / dot(Y.back(), Y.back());
      for (double& v : d) v *= gamma;
    }
    for (std::size_t k = 0; k < S.size(); ++k) {
      const double beta = rho[k] * fdot(Y[k], d);
      for (std::size_t i = 0; i < n; ++i)
        if (free[i]) d[i] += (alpha[k] - beta) * S[k][i];
    }
    if (fdot(d, g) >= 0.0) {
      for (std::size_t i = 0; i < n; ++i) d[i] = free[i] ? -g[i] : 0.0;
      S.clear();
      Y.clear();
      rho.clear();
    }
    double step = 1.0;
    double fn = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < n; ++i) xn[i] = std::clamp(x[i] + step * d[i], lo[i], hi[i]);
      fn = f(xn, gn);
      double decrease = 0.0;
      for (std::size_t i = 0; i < n; ++i) decrease += g[i] * (xn[i] - x[i]);
      if (fn <= fx + opt.armijo * decrease) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = xn[i] - x[i];
      y[i] = gn[i] - g[i];
    }
    const double sy = dot(s, y);
    if (sy > 1e-12 * dot(y, y)) {
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
      if (S.size() > opt.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    x.swap(xn);
    g.swap(gn);
    fx = fn;
  }
  r.projected_gradient = projected_gradient_norm(x, g, lo, hi);
  r.converged = r.converged || r.projected_gradient < opt.gradient_tolerance;
  r.x = std::move(x);
  r.objective = fx;
  return r;
}

}  // namespace dsd
