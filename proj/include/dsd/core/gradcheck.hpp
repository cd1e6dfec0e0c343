#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "dsd/core/tape.hpp"
#include "dsd/core/tensor.hpp"

namespace dsd {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;

  bool passed(double tol) const { return max_rel_error < tol; }
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero entries from
/// turning rounding noise into large relative errors.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

using ScalarFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

enum class Stencil { central3, central5 };

/// Derivative of `g` at 0 from samples at multiples of h. The five-point rule
/// has O(h^4) truncation error, so larger steps keep roundoff down.
template <class G>
double finite_difference(const G& g, double h, Stencil s) {
  if (s == Stencil::central3) return (g(h) - g(-h)) / (2.0 * h);
  return (8.0 * (g(h) - g(-h)) - (g(2.0 * h) - g(-2.0 * h))) / (12.0 * h);
}

/// Compares reverse-mode gradients of `f` at `point` against finite
/// differences with step `h`.
inline GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& point,
                                  double h = 1e-5, double floor = 1e-8,
                                  Stencil stencil = Stencil::central3) {
  auto eval = [&](const std::vector<Tensor>& at, bool with_grad, std::vector<Tensor>* grads) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& t : at) vars.push_back(tape.input(t.rows(), t.cols(), t.storage()));
    ad::Var y = f(tape, vars);
    if (with_grad) {
      tape.backward(y);
      for (const auto& v : vars) {
        auto g = v.grad();
        grads->push_back(Tensor::matrix(v.rows(), v.cols(),
                                        g.empty() ? std::vector<double>(v.size(), 0.0)
                                                  : std::vector<double>(g.begin(), g.end())));
      }
    }
    return y.item();
  };

  std::vector<Tensor> analytic;
  eval(point, true, &analytic);

  GradCheckReport r;
  std::vector<Tensor> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    for (std::size_t k = 0; k < point[i].size(); ++k) {
      const double x0 = point[i][k];
      const double numeric = finite_difference(
          [&](double d) {
            probe[i][k] = x0 + d;
            const double v = eval(probe, false, nullptr);
            probe[i][k] = x0;
            return v;
          },
          h, stencil);
      const double a = analytic[i][k];
      const double rel = relative_error(a, numeric, floor);
      r.max_abs_error = std::max(r.max_abs_error, std::abs(a - numeric));
      if (rel > r.max_rel_error || r.checked == 0) {
        r.max_rel_error = std::max(r.max_rel_error, rel);
        r.worst_input = i;
        r.worst_index = k;
        r.worst_analytic = a;
        r.worst_numeric = numeric;
      }
      ++r.checked;
    }
  }
  return r;
}

}  // namespace dsd
