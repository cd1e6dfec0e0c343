#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsd/core/tape.hpp"
#include "dsd/data/alphabet.hpp"
#include "dsd/model/dsd_model.hpp"

namespace dsd {

inline constexpr double kRankThreshold = 1e-10;

struct AuditEntry {
  std::string text;
  std::size_t rank = 0;
  double condition = 0.0;  // sigma_max / sigma_min
  bool invertible = false;
};

struct AuditReport {
  std::vector<AuditEntry> entries;
  std::vector<std::string> singular;
  double max_condition = 0.0;

  bool all_invertible() const noexcept { return singular.empty(); }
};

/// Rank and condition of one L x L matrix by SVD; singular values below
/// kRankThreshold * sigma_max do not count towards the rank.
inline AuditEntry svd_rank(const Tensor& c) {
  const auto n = static_cast<Eigen::Index>(c.rows());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = c(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
  AuditEntry e;
  const double smax = s(0), smin = s(n - 1);
  for (Eigen::Index i = 0; i < n; ++i) e.rank += s(i) > kRankThreshold * smax ? 1 : 0;
  e.invertible = smax > 0.0 && smin / smax > kRankThreshold;
  e.condition = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
  return e;
}

/// Every string over `chars` of length 1 and 2 exhaustively; for lengths 3 ..
/// max_len, `samples_per_length` random strings each.
inline AuditReport audit_invertibility(DsdModel& model, const std::u32string& chars, std::size_t max_len,
                                       std::size_t samples_per_length = 1000, std::uint64_t seed = 0,
                                       const Alphabet& alphabet = Alphabet::default_alphabet()) {
  if (chars.empty()) throw InvariantError("audit: empty character set");
  std::vector<std::u32string> strings;
  for (auto c : chars) strings.push_back(std::u32string(1, c));
  if (max_len >= 2)
    for (auto a : chars)
      for (auto b : chars) strings.push_back(std::u32string{a, b});
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, chars.size() - 1);
  for (std::size_t len = 3; len <= max_len; ++len)
    for (std::size_t k = 0; k < samples_per_length; ++k) {
      std::u32string s(len, U' ');
      for (auto& c : s) c = chars[pick(rng)];
      strings.push_back(std::move(s));
    }
  AuditReport r;
  for (const auto& s : strings) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < s.size(); ++i) idx.push_back(alphabet.index_of(s[i], i));
    ad::Tape t;
    ad::Var raw = model.char_raw(t, idx);
    auto cs = model.char_matrices(t, ad::slice_rows(raw, raw.rows() - 1, 1));
    AuditEntry e = svd_rank(cs[0].tensor());
    e.text = utf8_encode(s);
    if (!e.invertible) r.singular.push_back(e.text);
    r.max_condition = std::max(r.max_condition, e.condition);
    r.entries.push_back(std::move(e));
  }
  return r;
}

}  // namespace dsd
