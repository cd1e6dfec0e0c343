#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "../common/ctc_oracle.hpp"
#include "dsd/core/gradcheck.hpp"
#include "dsd/data/synth.hpp"
#include "dsd/seg/ctc.hpp"
#include "dsd/seg/features.hpp"
#include "dsd/seg/segnet.hpp"

using namespace dsd;

namespace {

std::vector<std::vector<double>> softmax_rows(const Tensor& logits) {
  std::vector<std::vector<double>> p(logits.rows(), std::vector<double>(logits.cols()));
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    double z = 0.0;
    for (std::size_t k = 0; k < logits.cols(); ++k) z += std::exp(logits(t, k));
    for (std::size_t k = 0; k < logits.cols(); ++k) p[t][k] = std::exp(logits(t, k)) / z;
  }
  return p;
}

Tensor random_logits(std::size_t n, std::size_t q, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.5);
  Tensor t({n, q}, 0.0);
  for (double& v : t.storage()) v = d(rng);
  return t;
}

double dp_loss(const Tensor& logits, const std::vector<std::size_t>& label, const CtcOptions& opt) {
  ad::Tape t;
  return ad::seg_ctc_loss(t.constant(logits), label, opt).item();
}

}  // namespace

TEST(Features, ShapeAndFinite) {
  for (std::size_t n : {2u, 3u, 17u}) {
    StrokeSequence s;
    for (std::size_t i = 0; i < n; ++i) s.points.push_back({1.0 + i, 0.5 * i, i % 4 == 3 ? std::uint8_t{1} : std::uint8_t{0}, 0});
    Tensor f = extract_features(s);
    EXPECT_EQ(f.rows(), n);
    EXPECT_EQ(f.cols(), 23u);
    for (double v : f.data()) EXPECT_TRUE(std::isfinite(v));
  }
  StrokeSequence one;
  one.points.push_back({1, 1, 1, 0});
  EXPECT_THROW(extract_features(one), InvariantError);
}

TEST(Features, StraightLineHasZeroCurvature) {
  auto s = delta_encode(Strokes{{{0, 0}, {1, 2}, {2, 4}, {3, 6}, {4, 8}, {5, 10}}});
  Tensor f = extract_features(s);
  for (std::size_t t = 0; t < s.size(); ++t) {
    EXPECT_EQ(f(t, 5), 0.0);
    EXPECT_EQ(f(t, 6), 0.0);
    EXPECT_NEAR(f(t, 16), 0.0, 1e-12);
    EXPECT_NEAR(f(t, 17), 0.0, 1e-12);
  }
}

TEST(Features, VicinitySlopeHandComputed) {
  // Absolute points (0,0) (2,1) (3,3) (5,4) (6,7): from t=2 the window spans
  // all five, chord (6,7), angle atan2(7,6).
  StrokeSequence s;
  const double pts[5][2] = {{0, 0}, {2, 1}, {3, 3}, {5, 4}, {6, 7}};
  double px = 0, py = 0;
  for (int i = 0; i < 5; ++i) {
    s.points.push_back({pts[i][0] - px, pts[i][1] - py, static_cast<std::uint8_t>(i == 4), 0});
    px = pts[i][0];
    py = pts[i][1];
  }
  Tensor f = extract_features(s);
  const double ang = std::atan2(7.0, 6.0);
  EXPECT_NEAR(f(2, 14), std::cos(ang), 1e-12);
  EXPECT_NEAR(f(2, 15), std::sin(ang), 1e-12);
}

TEST(Ctc, RepeatedLabelSinglePath) {
  std::mt19937_64 rng(1);
  Tensor lg = random_logits(3, 3, rng);
  auto p = softmax_rows(lg);
  const CtcOptions opt{2, true};
  const double expect = -(std::log(p[0][0]) + std::log(p[1][2]) + std::log(p[2][0]));
  EXPECT_NEAR(dp_loss(lg, {0, 0}, opt), expect, 1e-12);
}

TEST(Ctc, DistinctLabelThreePaths) {
  std::mt19937_64 rng(2);
  Tensor lg = random_logits(3, 3, rng);
  auto p = softmax_rows(lg);
  const double sum = p[0][0] * p[1][0] * p[2][1] + p[0][0] * p[1][1] * p[2][1] + p[0][0] * p[1][2] * p[2][1];
  EXPECT_NEAR(std::exp(-dp_loss(lg, {0, 1}, CtcOptions{2, true})), sum, 1e-12);
  std::map<oracle::Labelling, std::size_t> counts;
  oracle::enumerate(p, 2, true, &counts);
  EXPECT_EQ((counts[oracle::Labelling{0, 1}]), 3u);
}

TEST(Ctc, UniformClosedForm) {
  for (std::size_t n = 4; n <= 6; ++n) {
    Tensor lg({n, 4}, 0.0);
    std::map<oracle::Labelling, std::size_t> counts;
    oracle::enumerate(softmax_rows(lg), 3, true, &counts);
    for (const oracle::Labelling lab : {oracle::Labelling{0, 1}, {1, 1, 2}, {2}}) {
      const double expect = -std::log(static_cast<double>(counts[lab]) * std::pow(4.0, -static_cast<double>(n)));
      EXPECT_NEAR(dp_loss(lg, lab, CtcOptions{3, true}), expect, 1e-10);
    }
  }
}

TEST(Ctc, MatchesEnumerationBothVariants) {
  std::mt19937_64 rng(3);
  for (bool distinct : {true, false}) {
    for (std::size_t n = 1; n <= 6; ++n) {
      Tensor lg = random_logits(n, 4, rng);
      auto total = oracle::enumerate(softmax_rows(lg), 3, distinct);
      for (const auto& [lab, pr] : total)
        EXPECT_NEAR(std::exp(-dp_loss(lg, lab, CtcOptions{3, distinct})), pr, 1e-12);
    }
  }
}

TEST(Ctc, TooFewFramesThrows) {
  Tensor lg({2, 3}, 0.0);
  EXPECT_THROW(dp_loss(lg, {0, 0}, CtcOptions{2, true}), InvariantError);
  EXPECT_THROW(dp_loss(lg, {}, CtcOptions{2, true}), InvariantError);
}

TEST(Ctc, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (const std::vector<std::size_t> lab : {std::vector<std::size_t>{0, 0, 1}, {1, 2, 1}}) {
    Tensor lg = random_logits(7, 4, rng);
    auto r = grad_check(
        [&](ad::Tape&, const std::vector<ad::Var>& v) { return ad::seg_ctc_loss(v[0], lab, CtcOptions{3, true}); },
        {lg});
    EXPECT_LT(r.max_rel_error, 1e-6);
  }
}

TEST(Viterbi, AbsorbsBlankBackward) {
  Tensor lg({3, 3}, 0.0);
  auto a = decode_alignment(lg, {0, 0}, CtcOptions{2, true});
  EXPECT_EQ(a.char_index, (std::vector<std::size_t>{0, 0, 1}));
  EXPECT_EQ(a.eoc, (std::vector<std::uint8_t>{0, 1, 1}));
}

TEST(Viterbi, ForcedIdentityAlignment) {
  Tensor lg({4, 5}, -10.0);
  const std::vector<std::size_t> lab{1, 3, 0, 2};
  for (std::size_t t = 0; t < 4; ++t) lg(t, lab[t]) = 10.0;
  auto a = decode_alignment(lg, lab, CtcOptions{4, true});
  EXPECT_EQ(a.char_index, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(a.eoc, (std::vector<std::uint8_t>(4, 1)));
}

TEST(Viterbi, BestPathDominatesEnumeration) {
  std::mt19937_64 rng(6);
  for (std::size_t n = 2; n <= 6; ++n) {
    Tensor lg = random_logits(n, 4, rng);
    std::map<oracle::Labelling, double> best;
    oracle::enumerate(softmax_rows(lg), 3, true, nullptr, &best);
    for (const auto& [lab, pmax] : best) {
      auto a = decode_alignment(lg, lab, CtcOptions{3, true});
      EXPECT_NEAR(std::exp(a.log_prob), pmax, 1e-12);
      // Alignment invariants.
      EXPECT_EQ(a.char_index.front(), 0u);
      EXPECT_EQ(a.char_index.back(), lab.size() - 1);
      std::size_t eocs = 0;
      for (std::size_t t = 0; t < n; ++t) {
        if (t > 0) EXPECT_LE(a.char_index[t] - a.char_index[t - 1], 1u);
        eocs += a.eoc[t];
      }
      EXPECT_EQ(eocs, lab.size());
    }
  }
}

TEST(SegNet, LearnsBoundariesOnSyntheticCorpus) {
  // Trained on random strings, evaluated on real words by other writers.
  SegNetConfig cfg;
  cfg.hidden = 16;
  cfg.layers = 2;
  SegNet net(cfg, 1);
  auto train = synth_corpus(random_styles(6, 3), random_letter_strings(1500, 2, 5, 5), 2);
  const auto& alpha = Alphabet::default_alphabet();
  SegTrainConfig tc;
  tc.steps = 5000;
  tc.batch = 2;
  tc.adam.learning_rate = 5e-3;
  auto trace = train_segmenter(net, train, alpha, tc);
  EXPECT_LT(trace.back(), trace.front());
  auto test = synth_corpus(random_styles(3, 77), default_words(), 9);
  std::size_t good = 0, total = 0;
  for (const auto& s : test) {
    auto seg = segment(net, s, alpha);
    auto truth = eoc_indices(s), got = eoc_indices(seg);
    ASSERT_EQ(truth.size(), got.size());
    for (std::size_t i = 0; i < truth.size(); ++i, ++total)
      good += (truth[i] > got[i] ? truth[i] - got[i] : got[i] - truth[i]) <= 2;
  }
  EXPECT_GE(static_cast<double>(good) / static_cast<double>(total), 0.9);
}
