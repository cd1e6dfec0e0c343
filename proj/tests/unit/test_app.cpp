#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dsd/app/audit.hpp"
#include "dsd/app/database.hpp"
#include "dsd/app/identify.hpp"
#include "dsd/app/interpolate.hpp"
#include "dsd/app/lbfgsb.hpp"
#include "dsd/app/newchar.hpp"
#include "dsd/data/synth.hpp"

using namespace dsd;
using ad::Tape;
using ad::Var;

namespace {

DsdModel tiny_model(std::uint64_t seed = 1) {
  DsdConfig c;
  c.latent = 8;
  c.components = 3;
  DsdModel m(c, seed);
  m.set_delta_scale(10.0);
  return m;
}

StrokeSequence written(const std::string& text, bool cursive, std::size_t writer = 0) {
  auto st = random_styles(writer + 1, 5)[writer];
  st.cursive = cursive;
  auto rng = detail::seeded({writer, 3});
  return synth_sample(st, text, synth_writer_id(writer), rng);
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

Eigen::MatrixXd random_invertible(std::size_t n, std::mt19937_64& rng) {
  Eigen::MatrixXd m(n, n);
  std::normal_distribution<double> d(0.0, 1.0);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = d(rng) + (i == j ? 3.0 : 0.0);
  return m;
}

std::vector<double> mat_vec(const Eigen::MatrixXd& c, const std::vector<double>& w) {
  const Eigen::VectorXd r = c * Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  return std::vector<double>(r.data(), r.data() + r.size());
}

double frobenius(const Tensor& a, const Eigen::MatrixXd& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double d = a(i, j) - b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      s += d * d;
    }
  return std::sqrt(s);
}

}  // namespace

TEST(Database, NonCursiveHisStoresSixArrays) {
  DsdModel m = tiny_model();
  const DsdDatabase db = build_database(m, {written("his", false)});
  std::vector<std::string> keys;
  for (const auto& [k, v] : db.entries) keys.push_back(utf8_encode(k));
  EXPECT_EQ(keys, (std::vector<std::string>{"h", "hi", "his", "i", "is", "s"}));
  EXPECT_EQ(db.at(U"his").wcts.size(), 3u);
  EXPECT_EQ(db.at(U"is").first_char, 1u);
  // Arrays from one start are prefixes of each other.
  EXPECT_EQ(db.at(U"hi").wcts[1], db.at(U"his").wcts[1]);
  EXPECT_EQ(db.candidates, 6u);
}

TEST(Database, CursiveHisStoresThreeArrays) {
  DsdModel m = tiny_model();
  const StrokeSequence s = written("his", true);
  const auto starts = array_starts(s);
  EXPECT_EQ(starts, (std::vector<bool>{true, false, false}));
  const DsdDatabase db = build_database(m, {s});
  std::vector<std::string> keys;
  for (const auto& [k, v] : db.entries) keys.push_back(utf8_encode(k));
  EXPECT_EQ(keys, (std::vector<std::string>{"h", "hi", "his"}));
}

TEST(Database, SingleCharacterMeanIsInverseImage) {
  DsdModel m = tiny_model(2);
  const StrokeSequence s = written("k", false);
  const DsdDatabase db = build_database(m, {s});
  EXPECT_EQ(db.size(), 1u);
  Tape t;
  Var w = m.encode_strokes(t, s);
  auto cs = m.char_dsd(t, Alphabet::default_alphabet().indices("k"));
  Var expect = ad::matmul(ad::inverse(cs[0]), ad::column(w, 0));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(db.mean_writer[i], expect.value()[i], 1e-14);
  EXPECT_THROW(build_database(m, {}), InvariantError);
}

TEST(Sampling, ThinFromHisFollowsRelinkTrace) {
  DsdModel m = tiny_model(3);
  const DsdDatabase db = build_database(m, {written("his", false)});
  SamplingTrace trace;
  const auto out = sample_wcts(m, db, "thin", &trace);
  ASSERT_EQ(out.size(), 4u);
  ASSERT_EQ(trace.segments.size(), 3u);
  EXPECT_EQ(trace.segments[0].key, U"t");
  EXPECT_TRUE(trace.segments[0].fallback);
  EXPECT_EQ(trace.segments[1].key, U"hi");
  EXPECT_FALSE(trace.segments[1].fallback);
  EXPECT_EQ(trace.segments[2].key, U"n");
  EXPECT_TRUE(trace.segments[2].fallback);
  using V = std::vector<std::string>;
  ASSERT_EQ(trace.calls.size(), 4u);
  EXPECT_EQ(trace.calls[0].inputs, (V{"t"}));
  EXPECT_EQ(trace.calls[1].inputs, (V{"t", "h"}));
  EXPECT_EQ(trace.calls[2].inputs, (V{"t", "hi"}));
  EXPECT_EQ(trace.calls[3].inputs, (V{"t", "hi", "n"}));

  // w_thi = h([w_t, w_hi]) evaluated directly.
  const auto& wt = trace.segments[0].wcts[0];
  const auto& whi = db.at(U"hi").wcts[1];
  Tape t;
  std::vector<double> rows(wt);
  rows.insert(rows.end(), whi.begin(), whi.end());
  Var direct = m.reconstruct_beta(t, t.constant(2, 8, rows));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(out[2][i], direct.value()[i]);
  // Fallback is C_t w_bar.
  auto cs = m.char_dsd(t, Alphabet::default_alphabet().indices("t"));
  Var ct = ad::matmul(cs[0], t.constant(8, 1, db.mean_writer));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(wt[i], ct.value()[i]);
}

TEST(Sampling, FullKeyIsOneSegment) {
  DsdModel m = tiny_model(4);
  const DsdDatabase db = build_database(m, {written("his", false)});
  SamplingTrace trace;
  const auto out = sample_wcts(m, db, "his", &trace);
  ASSERT_EQ(trace.segments.size(), 1u);
  using V = std::vector<std::string>;
  EXPECT_EQ(trace.calls[0].inputs, (V{"h"}));
  EXPECT_EQ(trace.calls[2].inputs, (V{"his"}));
  Tape t;
  Var one = m.reconstruct_beta(t, t.constant(1, 8, db.at(U"his").wcts[2]));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(out[2][i], one.value()[i]);
}

TEST(Sampling, EmptyDatabaseFallsBackEverywhere) {
  DsdModel m = tiny_model(5);
  DsdDatabase db;
  db.mean_writer.assign(8, 0.1);
  SamplingTrace trace;
  const auto out = sample_wcts(m, db, "abc", &trace);
  EXPECT_EQ(out.size(), 3u);
  for (const auto& s : trace.segments) EXPECT_TRUE(s.fallback);
  using V = std::vector<std::string>;
  EXPECT_EQ(trace.calls[2].inputs, (V{"a", "b", "c"}));
}

TEST(Sampling, CoverHasNoGapsOrOverlaps) {
  DsdModel m = tiny_model(6);
  const DsdDatabase db = build_database(m, {written("the", false), written("hint", false), written("ant", false)});
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> len(1, 9), ch(0, 6);
  const std::string letters = "thenais";
  for (int rep = 0; rep < 100; ++rep) {
    std::string target(static_cast<std::size_t>(len(rng)), 'a');
    for (char& c : target) c = letters[static_cast<std::size_t>(ch(rng))];
    SamplingTrace trace;
    const auto out = sample_wcts(m, db, target, &trace);
    EXPECT_EQ(out.size(), target.size());
    std::size_t pos = 0;
    for (const auto& s : trace.segments) {
      EXPECT_EQ(s.begin, pos);
      EXPECT_EQ(utf8_encode(s.key), target.substr(pos, s.key.size()));
      pos += s.key.size();
    }
    EXPECT_EQ(pos, target.size());
  }
}

TEST(Sampling, LongestFirstThenLeftmost) {
  DsdDatabase db;
  db.mean_writer.assign(2, 0.0);
  auto add = [&](const std::u32string& k) { db.entries[k].push_back({std::vector<Vec>(k.size(), Vec(2, 0.0)), 0, 0}); };
  add(U"ab");
  add(U"bc");
  add(U"abc");
  add(U"cd");
  auto segs = cover_target(db, U"abcd");
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].key, U"abc");
  segs = cover_target(db, U"bcab");
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[0].key, U"bc");
  EXPECT_EQ(segs[1].key, U"ab");
  // "ab" and "bc" both length 2 in "abc" without "abc" stored: leftmost wins.
  db.entries.erase(U"abc");
  segs = cover_target(db, U"abc");
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].key, U"ab");
}

TEST(NewChar, DirectLsqRecoversLinearWorld) {
  std::mt19937_64 rng(7);
  const std::size_t L = 16;
  const Eigen::MatrixXd cstar = random_invertible(L, rng);
  std::vector<DsdPair> pairs;
  for (int i = 0; i < 32; ++i) {
    auto w = random_vec(L, rng);
    pairs.emplace_back(w, mat_vec(cstar, w));
  }
  EXPECT_LT(frobenius(estimate_direct_lsq(pairs).c, cstar), 1e-6);
}

TEST(NewChar, SinglePairIsMinimumNormRankOne) {
  std::mt19937_64 rng(8);
  const auto w = random_vec(16, rng), wn = random_vec(16, rng);
  const Tensor c = estimate_direct_lsq({{w, wn}}).c;
  double ww = 0.0;
  for (double v : w) ww += v * v;
  for (std::size_t i = 0; i < 16; ++i) {
    double cw = 0.0;
    for (std::size_t j = 0; j < 16; ++j) {
      cw += c(i, j) * w[j];
      EXPECT_NEAR(c(i, j), wn[i] * w[j] / ww, 1e-12);
    }
    EXPECT_NEAR(cw, wn[i], 1e-12);
  }
}

TEST(NewChar, DirectLsqBeatsCompetitors) {
  std::mt19937_64 rng(9);
  const std::size_t L = 6;
  std::vector<DsdPair> pairs;
  for (int i = 0; i < 10; ++i) pairs.emplace_back(random_vec(L, rng), random_vec(L, rng));
  const NewCharResult best = estimate_direct_lsq(pairs);
  auto residual = [&](const Tensor& c) {
    double s = 0.0;
    for (const auto& [w, wn] : pairs)
      for (std::size_t i = 0; i < L; ++i) {
        double r = -wn[i];
        for (std::size_t j = 0; j < L; ++j) r += c(i, j) * w[j];
        s += r * r;
      }
    return s;
  };
  EXPECT_NEAR(residual(best.c), best.objective, 1e-10);
  std::normal_distribution<double> d(0.0, 0.05);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor other = best.c;
    for (std::size_t i = 0; i < other.size(); ++i) other[i] += d(rng);
    EXPECT_GE(residual(other), best.objective);
  }
}

TEST(NewChar, HeldOutResidualShrinksWithMorePairs) {
  std::mt19937_64 rng(10);
  const std::size_t L = 16;
  const Eigen::MatrixXd cstar = random_invertible(L, rng);
  std::vector<DsdPair> pool, held;
  std::normal_distribution<double> noise(0.0, 0.01);
  for (int i = 0; i < 32; ++i) {
    auto w = random_vec(L, rng);
    auto wn = mat_vec(cstar, w);
    for (double& v : wn) v += noise(rng);
    pool.emplace_back(w, wn);
  }
  for (int i = 0; i < 20; ++i) {
    auto w = random_vec(L, rng);
    held.emplace_back(w, mat_vec(cstar, w));
  }
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t n : {1u, 8u, 16u, 32u}) {
    const Tensor c = estimate_direct_lsq(std::vector<DsdPair>(pool.begin(), pool.begin() + n)).c;
    double r = 0.0;
    for (const auto& [w, wn] : held)
      for (std::size_t i = 0; i < L; ++i) {
        double e = -wn[i];
        for (std::size_t j = 0; j < L; ++j) e += c(i, j) * w[j];
        r += e * e;
      }
    EXPECT_LE(r, prev);
    prev = r;
  }
}

TEST(NewChar, Errors) {
  EXPECT_THROW(estimate_direct_lsq({}), InvariantError);
  EXPECT_THROW(estimate_direct_lsq({DsdPair{{1.0, 2.0}, {1.0}}}), ShapeError);
}

TEST(Lbfgsb, SeparableQuadraticClampsToBox) {
  const std::vector<double> target = {0.3, -2.0, 5.0, -0.7};
  ObjectiveFn f = [&](const std::vector<double>& x, std::vector<double>& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double w = 1.0 + static_cast<double>(i);
      s += w * (x[i] - target[i]) * (x[i] - target[i]);
      g[i] = 2.0 * w * (x[i] - target[i]);
    }
    return s;
  };
  const auto r = minimize_lbfgsb(f, std::vector<double>(4, 0.0), std::vector<double>(4, -1.0), std::vector<double>(4, 1.0));
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.x[0], 0.3, 1e-6);
  EXPECT_EQ(r.x[1], -1.0);
  EXPECT_EQ(r.x[2], 1.0);
  EXPECT_NEAR(r.x[3], -0.7, 1e-6);
}

TEST(Lbfgsb, MatchesProjectedGradientOnCoupledQuadratic) {
  std::mt19937_64 rng(11);
  const std::size_t n = 12;
  Eigen::MatrixXd a(n, n);
  std::normal_distribution<double> d(0.0, 1.0);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = d(rng);
  const Eigen::MatrixXd h = a.transpose() * a + Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = 4.0 * d(rng);
  ObjectiveFn f = [&](const std::vector<double>& x, std::vector<double>& g) {
    const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(n));
    const Eigen::VectorXd gv = h * xv - b;
    for (std::size_t i = 0; i < n; ++i) g[i] = gv(static_cast<Eigen::Index>(i));
    return 0.5 * xv.dot(h * xv) - b.dot(xv);
  };
  const std::vector<double> lo(n, -1.0), hi(n, 1.0);
  const auto r = minimize_lbfgsb(f, std::vector<double>(n, 0.0), lo, hi);
  EXPECT_TRUE(r.converged);
  // Reference: plain projected gradient with step 1/||H||, run to stationarity.
  const double step = 1.0 / h.operatorNorm();
  std::vector<double> x(n, 0.0), g(n);
  for (int it = 0; it < 200000; ++it) {
    f(x, g);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(x[i] - step * g[i], -1.0, 1.0);
  }
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(r.x[i], x[i], 1e-5);
}

TEST(NewChar, LatentModeRecoversReachableMatrix) {
  DsdModel m = tiny_model(12);
  const std::size_t L = 8;
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  std::vector<double> cstar(L);
  for (double& v : cstar) v = u(rng);
  Tape t;
  auto cs = m.char_matrices(t, t.constant(1, L, cstar));
  Eigen::MatrixXd c(L, L);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cs[0].value()[i * L + j];
  std::vector<DsdPair> pairs;
  for (int i = 0; i < 12; ++i) {
    auto w = random_vec(L, rng);
    pairs.emplace_back(w, mat_vec(c, w));
  }
  const NewCharResult r = estimate_new_character(m, pairs, NewCharMode::latent_lbfgsb);
  EXPECT_TRUE(r.converged);
  EXPECT_LT(r.objective, 1e-10);
  EXPECT_LT(frobenius(r.c, c), 1e-5);
  for (double v : r.latent) EXPECT_LE(std::abs(v), 1.0);
}

TEST(Interpolate, WriterEndpointsAndSymmetry) {
  const std::vector<double> a = {1, -2, 3}, b = {-1, 2, -3};
  EXPECT_EQ(interpolate_writer(a, b, 1.0), a);
  EXPECT_EQ(interpolate_writer(a, b, 0.0), b);
  EXPECT_EQ(interpolate_writer(a, b, 0.5), (std::vector<double>{0, 0, 0}));
  EXPECT_THROW(interpolate_writer(a, b, 1.5), InvariantError);
  EXPECT_THROW(interpolate_writer(a, {1.0}, 0.5), ShapeError);
}

TEST(Interpolate, WriterIsLinear) {
  std::mt19937_64 rng(14);
  const auto a = random_vec(5, rng), b = random_vec(5, rng);
  for (double g : {0.1, 0.25, 0.8}) {
    const auto v = interpolate_writer(a, b, g);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(v[i], g * a[i] + (1 - g) * b[i], 1e-15);
  }
}

TEST(Interpolate, BilinearCornersAndMean) {
  std::array<Tensor, 4> c = {Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor::matrix(2, 2, {2, 0, 0, 2}),
                             Tensor::matrix(2, 2, {0, 1, 1, 0}), Tensor::matrix(2, 2, {4, 4, 4, 4})};
  EXPECT_EQ(interpolate_char_bilinear(c, {1, 0, 0, 0}), c[0]);
  EXPECT_EQ(interpolate_char_bilinear(c, {0.25, 0.25, 0.25, 0.25}), Tensor::matrix(2, 2, {1.75, 1.25, 1.25, 1.75}));
  std::array<Tensor, 4> same = {c[1], c[1], c[1], c[1]};
  EXPECT_EQ(interpolate_char_bilinear(same, bilinear_weights(0.3, 0.6)), c[1]);
  EXPECT_THROW(interpolate_char_bilinear(c, {0.5, 0.5, 0.5, 0}), InvariantError);
  EXPECT_THROW(interpolate_char_bilinear(c, {1.5, -0.5, 0, 0}), InvariantError);
}

TEST(Identify, SelfQueriesAreExact) {
  Codebook cb{{"a", "b", "c"}, {{0, 0}, {1, 0}, {0, 1}}};
  std::vector<QueryGroup> q = {{"a", {{0, 0}}}, {"b", {{1, 0}}}, {"c", {{0, 1}}}};
  EXPECT_EQ(identify_writers(cb, q).accuracy, 1.0);
  Codebook one{{"a"}, {{5, 5}}};
  EXPECT_EQ(identify_writers(one, {{"a", {{0, 0}, {9, 9}}}}).accuracy, 1.0);
}

TEST(Identify, TiesGoToLowestIndex) {
  Codebook cb{{"a", "b"}, {{-1, 0}, {1, 0}}};
  EXPECT_EQ(nearest_writer(cb, {0, 0}), 0u);
  // One vote each: tie in the average goes to writer 0.
  EXPECT_EQ(predict_writer(cb, {{1, 0}, {-1, 0}}), 0u);
  EXPECT_EQ(predict_writer(cb, {{1, 0}, {0.9, 0}, {-1, 0}}), 1u);
  EXPECT_THROW(nearest_writer(Codebook{}, {0, 0}), InvariantError);
}

TEST(Identify, AccuracyInvariantToCodebookOrder) {
  std::mt19937_64 rng(15);
  Codebook cb;
  for (int j = 0; j < 5; ++j) {
    cb.writers.push_back("w" + std::to_string(j));
    cb.w.push_back(random_vec(4, rng));
  }
  std::vector<QueryGroup> q;
  std::normal_distribution<double> n(0.0, 0.8);
  // Single-word queries: no vote ties, so the tie-break never applies.
  for (int j = 0; j < 5; ++j)
    for (int rep = 0; rep < 4; ++rep) {
      QueryGroup g{"w" + std::to_string(j), {}};
      for (int k = 0; k < 1; ++k) {
        auto v = cb.w[static_cast<std::size_t>(j)];
        for (double& x : v) x += n(rng);
        g.word_dsds.push_back(v);
      }
      q.push_back(g);
    }
  const double acc = identify_writers(cb, q).accuracy;
  Codebook rev{{cb.writers.rbegin(), cb.writers.rend()}, {cb.w.rbegin(), cb.w.rend()}};
  EXPECT_EQ(identify_writers(rev, q).accuracy, acc);
}

TEST(Identify, CodebookGroupsByWriter) {
  DsdModel m = tiny_model(16);
  std::vector<StrokeSequence> s = {written("an", false, 0), written("to", false, 1), written("it", false, 0)};
  const Codebook cb = build_codebook(m, s);
  ASSERT_EQ(cb.writers, (std::vector<std::string>{"writer_00", "writer_01"}));
  const auto w0 = writer_dsd(m, std::vector<StrokeSequence>{s[0], s[2]});
  EXPECT_EQ(cb.w[0], w0);
  EXPECT_EQ(nearest_writer(cb, writer_dsd(m, s[1])), 1u);
}

TEST(Audit, RandomInitIsFullRankAndDeterministic) {
  DsdModel m = tiny_model(17);
  const auto a = audit_invertibility(m, U"abcdefgh", 3, 20, 1);
  EXPECT_EQ(a.entries.size(), 8u + 64u + 20u);
  EXPECT_TRUE(a.all_invertible());
  const auto b = audit_invertibility(m, U"abcdefgh", 3, 20, 1);
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    EXPECT_EQ(a.entries[i].text, b.entries[i].text);
    EXPECT_EQ(a.entries[i].condition, b.entries[i].condition);
  }
}

TEST(Audit, SvdRankFlagsSingular) {
  const AuditEntry e = svd_rank(Tensor::matrix(3, 3, {1, 2, 3, 2, 4, 6, 0, 1, 1}));
  EXPECT_EQ(e.rank, 2u);
  EXPECT_FALSE(e.invertible);
  const AuditEntry f = svd_rank(Tensor::identity(3));
  EXPECT_EQ(f.rank, 3u);
  EXPECT_TRUE(f.invertible);
  EXPECT_NEAR(f.condition, 1.0, 1e-15);
}
