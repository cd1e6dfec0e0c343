#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dsd/app/lbfgsb.hpp"
#include "dsd/core/error.hpp"
#include "dsd/core/tensor.hpp"
#include "dsd/model/dsd_model.hpp"

namespace dsd {

/// (w, w_new): a writer DSD and that writer's DSD for the new character.
using DsdPair = std::pair<std::vector<double>, std::vector<double>>;

enum class NewCharMode { direct_lsq, latent_lbfgsb };

struct NewCharResult {
  Tensor c;
  double objective = 0.0;  // ||C Q - P||_F^2
  bool converged = true;
  std::size_t iterations = 0;
  std::vector<double> latent;  // c_raw, latent mode only
};

namespace detail {

inline void stack_pairs(const std::vector<DsdPair>& pairs, Eigen::MatrixXd& q, Eigen::MatrixXd& p) {
  if (pairs.empty()) throw InvariantError("estimate_new_character: no pairs");
  const std::size_t L = pairs.front().first.size();
  q.resize(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(pairs.size()));
  p.resizeLike(q);
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    if (pairs[j].first.size() != L || pairs[j].second.size() != L)
      throw ShapeError("estimate_new_character: pair " + std::to_string(j) + " has the wrong length");
    for (std::size_t i = 0; i < L; ++i) {
      q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pairs[j].first[i];
      p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pairs[j].second[i];
    }
  }
}

inline Tensor to_tensor(const Eigen::MatrixXd& m) {
  Tensor t = Tensor::matrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()),
                            std::vector<double>(static_cast<std::size_t>(m.size())));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
  return t;
}

}  // namespace detail

/// C = P Q^+, the minimum-norm least-squares solution.
inline NewCharResult estimate_direct_lsq(const std::vector<DsdPair>& pairs) {
  Eigen::MatrixXd q, p;
  detail::stack_pairs(pairs, q, p);
  const Eigen::MatrixXd c = p * q.completeOrthogonalDecomposition().pseudoInverse();
  NewCharResult r;
  r.c = detail::to_tensor(c);
  r.objective = (c * q - p).squaredNorm();
  return r;
}

/// Optimises c_raw in [-1, 1]^L so that C = reshape(FC2(c_raw)) minimises
/// ||C Q - P||_F^2. FC2 is affine, so the gradient is analytic.
inline NewCharResult estimate_latent_lbfgsb(const DsdModel& model, const std::vector<DsdPair>& pairs,
                                            const LbfgsbOptions& opt = {}) {
  Eigen::MatrixXd q, p;
  detail::stack_pairs(pairs, q, p);
  const std::size_t L = model.latent();
  if (static_cast<std::size_t>(q.rows()) != L) throw ShapeError("estimate_new_character: pair length is not L");
  const auto& W = model.params().at("g.fc2.W").value;  // L x L^2, row-major
  const auto& b = model.params().at("g.fc2.b").value;
  const auto Li = static_cast<Eigen::Index>(L);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> Wm(W.data(), Li, Li * Li);
  const Eigen::Map<const Eigen::RowVectorXd> bm(b.data(), Li * Li);

  auto matrix_of = [&](const std::vector<double>& c) {
    const Eigen::Map<const Eigen::RowVectorXd> cm(c.data(), Li);
    const Eigen::RowVectorXd flat = cm * Wm + bm;
    return RowMat(Eigen::Map<const RowMat>(flat.data(), Li, Li));
  };
  ObjectiveFn f = [&](const std::vector<double>& c, std::vector<double>& g) {
    const RowMat C = matrix_of(c);
    const Eigen::MatrixXd R = C * q - p;
    const RowMat dC = 2.0 * R * q.transpose();
    const Eigen::Map<const Eigen::VectorXd> dflat(dC.data(), Li * Li);
    const Eigen::VectorXd dc = Wm * dflat;
    for (std::size_t i = 0; i < L; ++i) g[i] = dc(static_cast<Eigen::Index>(i));
    return R.squaredNorm();
  };
  const auto res = minimize_lbfgsb(f, std::vector<double>(L, 0.0), std::vector<double>(L, -1.0),
                                   std::vector<double>(L, 1.0), opt);
  NewCharResult r;
  r.c = detail::to_tensor(matrix_of(res.x));
  r.objective = res.objective;
  r.converged = res.converged;
  r.iterations = res.iterations;
  r.latent = res.x;
  return r;
}

inline NewCharResult estimate_new_character(const DsdModel& model, const std::vector<DsdPair>& pairs,
                                            NewCharMode mode) {
  return mode == NewCharMode::direct_lsq ? estimate_direct_lsq(pairs) : estimate_latent_lbfgsb(model, pairs);
}

}  // namespace dsd
