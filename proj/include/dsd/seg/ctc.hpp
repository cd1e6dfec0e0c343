#pragma once

// Segmentation lattice. Every frame is assigned a character or a blank; a
// blank lasts exactly one frame (no blank-to-blank), and the path starts on
// the first character and ends on the last. A blank is mandatory between two
// equal adjacent characters and optional between distinct ones, unless
// `blank_between_distinct` is off, in which case distinct neighbours are
// joined directly.
//
// State layout: character i sits at 2i, the blank after it at 2i + 1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/core/tape.hpp"
#include "dsd/core/tensor.hpp"

namespace dsd {

struct CtcOptions {
  std::size_t blank = 0;
  bool blank_between_distinct = true;
};

struct SegLattice {
  std::vector<std::size_t> label;
  /// Per state: class index emitted, and whether the state is a blank.
  std::vector<std::size_t> emit;
  std::vector<bool> is_blank;
  /// Allowed predecessors of each state (self loops included).
  std::vector<std::vector<std::size_t>> pred;

  std::size_t num_states() const noexcept { return emit.size(); }
  std::size_t final_state() const noexcept { return emit.size() - 1; }

  /// Shortest admissible frame count.
  std::size_t min_frames() const {
    std::size_t n = label.size();
    for (std::size_t i = 1; i < label.size(); ++i) n += label[i] == label[i - 1];
    return n;
  }

  static SegLattice build(const std::vector<std::size_t>& label, const CtcOptions& opt) {
    if (label.empty()) throw InvariantError("CTC label is empty");
    SegLattice L;
    L.label = label;
    const std::size_t m = label.size();
    for (std::size_t i = 0; i < m; ++i) {
      if (label[i] == opt.blank) throw InvariantError("CTC label contains the blank index");
      L.emit.push_back(label[i]);
      L.is_blank.push_back(false);
      if (i + 1 < m) {
        L.emit.push_back(opt.blank);
        L.is_blank.push_back(true);
      }
    }
    const std::size_t S = L.emit.size();
    L.pred.assign(S, {});
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t c = 2 * i;
      L.pred[c].push_back(c);
      if (i > 0) {
        const bool same = label[i] == label[i - 1];
        const bool blank_open = same || opt.blank_between_distinct;
        if (blank_open) L.pred[c].push_back(c - 1);
        if (!same) L.pred[c].push_back(c - 2);
        if (blank_open) L.pred[c - 1].push_back(c - 2);
      }
    }
    return L;
  }

  /// A blank state with no predecessor is unreachable.
  bool reachable(std::size_t s) const { return s == 0 || !pred[s].empty(); }
};

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// alpha[t][s]: log probability of frames 0..t ending in s (emission at t included).
inline std::vector<double> ctc_alpha(const SegLattice& L, const double* lp, std::size_t n, std::size_t q) {
  const std::size_t S = L.num_states();
  std::vector<double> a(n * S, kNegInf);
  a[0] = lp[L.emit[0]];
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = kNegInf;
      for (auto r : L.pred[s]) acc = log_add(acc, a[(t - 1) * S + r]);
      if (acc != kNegInf) a[t * S + s] = acc + lp[t * q + L.emit[s]];
    }
  }
  return a;
}

// beta[t][s]: log probability of frames t+1..n-1 given state s at t.
inline std::vector<double> ctc_beta(const SegLattice& L, const double* lp, std::size_t n, std::size_t q) {
  const std::size_t S = L.num_states();
  std::vector<double> b(n * S, kNegInf);
  b[(n - 1) * S + L.final_state()] = 0.0;
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t s2 = 0; s2 < S; ++s2) {
      const double nxt = b[(t + 1) * S + s2];
      if (nxt == kNegInf) continue;
      const double v = nxt + lp[(t + 1) * q + L.emit[s2]];
      for (auto r : L.pred[s2]) b[t * S + r] = log_add(b[t * S + r], v);
    }
  }
  return b;
}

inline void check_frames(const SegLattice& L, std::size_t n) {
  if (n < L.min_frames())
    throw InvariantError("CTC: " + std::to_string(n) + " frames cannot fit a label needing " +
                         std::to_string(L.min_frames()));
}

}  // namespace detail

namespace ad {

/// -log P(label | log_probs) over the lattice; `log_probs` is N x Q of
/// per-frame log probabilities. Gradient by forward-backward.
inline Var ctc_nll_from_log_probs(Var log_probs, const std::vector<std::size_t>& label,
                                  const CtcOptions& opt) {
  const std::size_t n = log_probs.rows(), q = log_probs.cols();
  if (opt.blank >= q) throw ShapeError("CTC blank index outside the class range");
  for (auto c : label)
    if (c >= q) throw ShapeError("CTC label index outside the class range");
  SegLattice L = SegLattice::build(label, opt);
  dsd::detail::check_frames(L, n);
  const double* lp = log_probs.value().data();
  auto alpha = dsd::detail::ctc_alpha(L, lp, n, q);
  const double logp = alpha[(n - 1) * L.num_states() + L.final_state()];
  Tape& t = log_probs.tape();
  const auto il = log_probs.id();
  return t.push(1, 1, {-logp}, t.needs_grad(il),
                [L = std::move(L), alpha = std::move(alpha), logp, n, q, il](Tape& tp, std::uint32_t self) {
                  const double g = tp.grad_ptr(self)[0];
                  const double* lp = tp.value_ptr(il);
                  double* gl = tp.grad_ptr(il);
                  auto beta = dsd::detail::ctc_beta(L, lp, n, q);
                  const std::size_t S = L.num_states();
                  for (std::size_t tt = 0; tt < n; ++tt)
                    for (std::size_t s = 0; s < S; ++s) {
                      const double a = alpha[tt * S + s], b = beta[tt * S + s];
                      if (a == dsd::detail::kNegInf || b == dsd::detail::kNegInf) continue;
                      gl[tt * q + L.emit[s]] -= g * std::exp(a + b - logp);
                    }
                });
}

/// Lattice loss on raw logits (log-softmax applied per frame).
inline Var seg_ctc_loss(Var logits, const std::vector<std::size_t>& label, const CtcOptions& opt) {
  return ctc_nll_from_log_probs(log_softmax_rows(logits), label, opt);
}

}  // namespace ad

struct Alignment {
  /// Character index of every frame.
  std::vector<std::size_t> char_index;
  std::vector<std::uint8_t> eoc;
  /// Log probability of the best path.
  double log_prob = 0.0;
};

/// Viterbi path over the lattice. Blank frames belong to the preceding
/// character, so each character's eoc is the last frame before the next
/// character starts.
inline Alignment decode_alignment(const Tensor& logits, const std::vector<std::size_t>& label,
                                  const CtcOptions& opt) {
  const std::size_t n = logits.rows(), q = logits.cols();
  SegLattice L = SegLattice::build(label, opt);
  detail::check_frames(L, n);
  std::vector<double> lp(n * q);
  for (std::size_t t = 0; t < n; ++t) {
    double m = logits(t, 0);
    for (std::size_t k = 1; k < q; ++k) m = std::max(m, logits(t, k));
    double z = 0.0;
    for (std::size_t k = 0; k < q; ++k) z += std::exp(logits(t, k) - m);
    const double lz = m + std::log(z);
    for (std::size_t k = 0; k < q; ++k) lp[t * q + k] = logits(t, k) - lz;
  }
  const std::size_t S = L.num_states();
  std::vector<double> v(n * S, detail::kNegInf);
  std::vector<std::size_t> back(n * S, 0);
  v[0] = lp[L.emit[0]];
  for (std::size_t t = 1; t < n; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      double best = detail::kNegInf;
      std::size_t arg = 0;
      for (auto r : L.pred[s]) {
        if (v[(t - 1) * S + r] > best) {
          best = v[(t - 1) * S + r];
          arg = r;
        }
      }
      if (best != detail::kNegInf) {
        v[t * S + s] = best + lp[t * q + L.emit[s]];
        back[t * S + s] = arg;
      }
    }
  Alignment a;
  a.log_prob = v[(n - 1) * S + L.final_state()];
  std::vector<std::size_t> states(n);
  states[n - 1] = L.final_state();
  for (std::size_t t = n - 1; t > 0; --t) states[t - 1] = back[t * S + states[t]];
  a.char_index.resize(n);
  a.eoc.assign(n, 0);
  for (std::size_t t = 0; t < n; ++t) a.char_index[t] = states[t] / 2;
  for (std::size_t t = 0; t < n; ++t)
    if (t + 1 == n || a.char_index[t + 1] != a.char_index[t]) a.eoc[t] = 1;
  return a;
}

}  // namespace dsd
