#pragma once

// Scalar test functions exercising every differentiable primitive, at random
// small points. Shared by the unit suite and the acceptance run.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dsd/core/gradcheck.hpp"
#include "dsd/core/linalg.hpp"
#include "dsd/core/lstm.hpp"
#include "dsd/core/tape.hpp"
#include "dsd/model/mdn.hpp"
#include "dsd/seg/ctc.hpp"

namespace cases {

using dsd::Tensor;
using dsd::ad::Tape;
using dsd::ad::Var;
namespace ad = dsd::ad;

inline Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(r * c);
  for (double& x : v) x = d(rng);
  return Tensor::matrix(r, c, std::move(v));
}

// Diagonally dominant, so comfortably invertible.
inline Tensor well_conditioned(std::size_t n, std::mt19937_64& rng) {
  Tensor m = random_matrix(n, n, rng);
  for (std::size_t i = 0; i < n; ++i) m(i, i) += static_cast<double>(n);
  return m;
}

struct Case {
  std::string name;
  dsd::ScalarFn f;
  std::vector<Tensor> at;
  double h = 1e-5;
  dsd::Stencil stencil = dsd::Stencil::central3;
};

inline std::vector<Case> primitives(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor a = random_matrix(3, 4, rng), b = random_matrix(3, 4, rng, 0.5, 2.0);
  Tensor m = random_matrix(4, 2, rng), row = random_matrix(1, 4, rng), col = random_matrix(3, 1, rng);
  Tensor sq = well_conditioned(4, rng);
  Tensor lx = random_matrix(4, 3, rng), lw = random_matrix(6, 12, rng, -0.6, 0.6), lb = random_matrix(1, 12, rng);
  Tensor h0 = random_matrix(1, 3, rng), c0 = random_matrix(1, 3, rng);
  Tensor ctc = random_matrix(7, 4, rng, -2.0, 2.0);
  const std::size_t k = 3;
  Tensor head = random_matrix(5, dsd::mdn_width(k), rng);
  std::vector<double> targets;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 5; ++i) targets.insert(targets.end(), {u(rng), u(rng), double(i % 2), double(i == 4)});

  auto store = std::make_shared<dsd::ParameterStore>();
  auto stack = std::make_shared<dsd::LstmParams>(dsd::LstmParams::create(*store, "l", 3, 3, 2, true));
  stack->init(rng);

  std::vector<Case> out = {
      {"add", [](Tape&, const auto& v) { return ad::sum(ad::square(v[0] + v[1])); }, {a, b}},
      {"sub", [](Tape&, const auto& v) { return ad::sum(ad::square(v[0] - v[1])); }, {a, b}},
      {"neg", [](Tape&, const auto& v) { return ad::sum(ad::square(-v[0] + v[1])); }, {a, b}},
      {"mul", [](Tape&, const auto& v) { return ad::sum(v[0] * v[1]); }, {a, b}},
      {"div", [](Tape&, const auto& v) { return ad::sum(ad::div(v[0], v[1])); }, {a, b}},
      {"add_scalar", [](Tape&, const auto& v) { return ad::sum(ad::square(ad::add_scalar(v[0], 0.7))); }, {a}},
      {"exp", [](Tape&, const auto& v) { return ad::sum(ad::exp(v[0])); }, {a}},
      {"log", [](Tape&, const auto& v) { return ad::sum(ad::log(v[0])); }, {b}},
      {"tanh", [](Tape&, const auto& v) { return ad::sum(ad::tanh(v[0])); }, {a}},
      {"sigmoid", [](Tape&, const auto& v) { return ad::sum(ad::sigmoid(v[0])); }, {a}},
      {"softplus", [](Tape&, const auto& v) { return ad::sum(ad::softplus(v[0])); }, {a}},
      {"scale", [](Tape&, const auto& v) { return ad::sum(ad::square(ad::scale(v[0], -2.5))); }, {a}},
      {"matmul", [](Tape&, const auto& v) { return ad::sum(ad::square(ad::matmul(v[0], v[1]))); }, {a, m}},
      {"affine",
       [](Tape&, const auto& v) { return ad::sum(ad::tanh(ad::affine(v[0], v[1], v[2]))); },
       {a, m, Tensor::matrix(1, 2, {0.1, -0.3})}},
      {"transpose", [](Tape&, const auto& v) { return ad::sum(ad::square(ad::matmul(ad::transpose(v[0]), v[0]))); }, {a}},
      {"add_row", [](Tape&, const auto& v) { return ad::sum(ad::square(ad::add_row(v[0], v[1]))); }, {a, row}},
      {"mul_col", [](Tape&, const auto& v) { return ad::sum(ad::square(ad::mul_col(v[0], v[1]))); }, {a, col}},
      {"logsumexp", [](Tape&, const auto& v) { return ad::sum(ad::logsumexp_rows(v[0])); }, {a}},
      {"log_softmax", [](Tape&, const auto& v) { return ad::sum(ad::square(ad::log_softmax_rows(v[0]))); }, {a}},
      {"softmax", [](Tape&, const auto& v) { return ad::sum(ad::square(ad::softmax_rows(v[0]))); }, {a}},
      {"squared_norm", [](Tape&, const auto& v) { return ad::squared_norm(v[0]); }, {a}},
      {"reshape", [](Tape&, const auto& v) { return ad::sum(ad::square(ad::matmul(ad::reshape(v[0], 4, 3), v[0]))); }, {a}},
      {"slices",
       [](Tape&, const auto& v) {
         return ad::sum(ad::square(ad::slice_rows(v[0], 1, 2)) * ad::square(ad::slice_rows(ad::slice_cols(v[0], 0, 4), 0, 2)));
       },
       {a}},
      {"concat",
       [](Tape&, const auto& v) {
         return ad::sum(ad::square(ad::concat_cols({v[0], v[1]}))) + ad::sum(ad::tanh(ad::concat_rows({v[0], v[1]})));
       },
       {a, b}},
      {"gather", [](Tape&, const auto& v) { return ad::sum(ad::square(ad::gather_rows(v[0], {2, 0, 2}))); }, {a}},
      {"reverse", [](Tape&, const auto& v) { return ad::sum(ad::reverse_rows(v[0]) * v[1]); }, {a, b}},
      {"add_n", [](Tape&, const auto& v) { return ad::sum(ad::square(ad::add_n({v[0], v[1], v[0]}))); }, {a, b}},
      {"clamp_min", [](Tape&, const auto& v) { return ad::sum(ad::square(ad::clamp_min(v[0], 0.05))); }, {a}},
      {"inverse", [](Tape&, const auto& v) { return ad::sum(ad::square(ad::inverse(v[0]))); }, {sq}},
      {"lstm_layer",
       [](Tape&, const auto& v) { return ad::sum(ad::square(ad::lstm_layer(v[0], v[1], v[2], v[3], v[4]))); },
       {lx, lw, lb, h0, c0}},
      {"lstm_forward",
       [store, stack](Tape&, const auto& v) { return ad::sum(ad::tanh(ad::lstm_forward(v[0], *stack))); },
       {lx}},
      {"ctc",
       [](Tape&, const auto& v) { return ad::seg_ctc_loss(v[0], {0, 0, 1}, dsd::CtcOptions{3, true}); },
       {ctc}},
      {"mdn_losses",
       [targets, k](Tape&, const auto& v) { return ad::sum(ad::mdn_losses(v[0], targets, k)); },
       {head}, 1e-3, dsd::Stencil::central5},
  };
  return out;
}

}  // namespace cases
