#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "../common/param_fd.hpp"
#include "dsd/core/gradcheck.hpp"
#include "dsd/data/synth.hpp"
#include "dsd/train/losses.hpp"
#include "dsd/train/trainer.hpp"

using namespace dsd;
using ad::Tape;
using ad::Var;

namespace {

MdnStep unit_step(double mx, double my, double sigma) {
  MdnStep s;
  s.pi = {1.0};
  s.mu_x = {mx};
  s.mu_y = {my};
  s.sigma_x = {sigma};
  s.sigma_y = {sigma};
  s.rho = {0.0};
  return s;
}

DsdModel tiny_model(std::uint64_t seed = 1, std::size_t L = 8) {
  DsdConfig c;
  c.latent = L;
  c.components = 3;
  DsdModel m(c, seed);
  m.set_delta_scale(10.0);
  return m;
}

std::vector<StrokeSequence> corpus(const std::vector<std::string>& words, std::size_t writers = 2) {
  return synth_corpus(random_styles(writers, 21), words, 4);
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(LossLoc, MeansOnTargetGiveNLogTwoPi) {
  std::vector<MdnStep> steps;
  std::vector<std::array<double, 4>> tg;
  for (int i = 0; i < 7; ++i) {
    steps.push_back(unit_step(0.1 * i, -0.2 * i, 1.0));
    tg.push_back({0.1 * i, -0.2 * i, 0, 0});
  }
  EXPECT_NEAR(loss_loc(steps, tg), 7.0 * std::log(2.0 * std::numbers::pi), 1e-12);
}

TEST(LossLoc, ShrinkingSigmaAtMeanDecreases) {
  double prev = std::numeric_limits<double>::infinity();
  for (double s = 2.0; s > 0.01; s *= 0.8) {
    const double l = loss_loc({unit_step(1.0, 2.0, s)}, {{{1.0, 2.0, 0, 0}}});
    EXPECT_NEAR(l, std::log(2.0 * std::numbers::pi) + 2.0 * std::log(s), 1e-12);
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(LossLoc, LengthMismatchThrows) {
  EXPECT_THROW(loss_loc({unit_step(0, 0, 1)}, {}), ShapeError);
}

TEST(LossFlags, HalfProbabilityGivesLogTwo) {
  std::vector<MdnStep> steps(5, unit_step(0, 0, 1));
  std::vector<std::array<double, 4>> tg(5, {0, 0, 1, 0});
  const auto f = loss_flags(steps, tg);
  EXPECT_NEAR(f.eos, 5.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(f.eoc, 5.0 * std::log(2.0), 1e-12);
}

TEST(LossFlags, PerfectPredictionsAreClipped) {
  MdnStep s = unit_step(0, 0, 1);
  s.eos_prob = 1.0;
  s.eoc_prob = 0.0;
  const auto f = loss_flags({s, s}, {{{0, 0, 1, 0}}, {{0, 0, 1, 0}}});
  EXPECT_NEAR(f.eos, -2.0 * std::log(1.0 - 1e-7), 1e-15);
  EXPECT_LT(f.eos, 1e-6);
  EXPECT_LT(f.eoc, 1e-6);
}

TEST(LossFlags, HandCase) {
  MdnStep a = unit_step(0, 0, 1), b = a;
  a.eos_prob = 0.9;
  b.eos_prob = 0.2;
  const auto f = loss_flags({a, b}, {{{0, 0, 1, 0}}, {{0, 0, 0, 0}}});
  EXPECT_NEAR(f.eos, -(std::log(0.9) + std::log(0.8)), 1e-15);
}

TEST(LossW, Examples) {
  EXPECT_EQ(loss_w_consistency({{1.0, 2.0}}), 0.0);
  EXPECT_EQ(loss_w_consistency({{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}}), 0.0);
  EXPECT_EQ(loss_w_consistency({{0.0}, {2.0}}), 2.0);
  EXPECT_THROW(loss_w_consistency({}), InvariantError);
}

TEST(LossW, TapeFormMatchesScalar) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::vector<double>> c(4, std::vector<double>(3));
  Tape t;
  std::vector<Var> vs;
  for (auto& v : c) {
    for (double& x : v) x = u(rng);
    vs.push_back(t.constant(3, 1, v));
  }
  EXPECT_NEAR(ad::loss_w_consistency(vs).item(), loss_w_consistency(c), 1e-14);
}

TEST(LossWct, Examples) {
  EXPECT_EQ(loss_wct_reconstruction({{1, 2}, {3, 4}}, {{1, 2}, {3, 4}}), 0.0);
  EXPECT_EQ(loss_wct_reconstruction({{1, 2}, {3, 4}}, {{1, 2}, {3, 5}}), 1.0);
  EXPECT_THROW(loss_wct_reconstruction({{1}}, {}), ShapeError);
}

TEST(LossWct, SingleCharacterAlphaIsRoundTripResidual) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> c(16), w(4);
  for (double& v : c) v = u(rng);
  for (std::size_t i = 0; i < 4; ++i) c[i * 4 + i] += 2.0;
  for (double& v : w) v = u(rng);
  Tape t;
  std::vector<Var> cs = {t.constant(4, 4, c)};
  Var wr = t.constant(1, 4, w);
  Var wa = ad::reconstruct_alpha(cs, ad::mean_writer_dsd(cs, wr));
  const double l = ad::loss_wct_reconstruction(wr, wa).item();
  Var cc = ad::matmul(cs[0], ad::matmul(ad::inverse(cs[0]), ad::column(wr, 0)));
  EXPECT_EQ(l, ad::squared_norm(ad::sub(ad::column(wr, 0), cc)).item());
  EXPECT_LT(l, 1e-20);
}

TEST(Ablation, Parse) {
  const Ablation a = parse_ablation("Lbeta,disable_wct_rec");
  EXPECT_TRUE(a.disable_Lbeta);
  EXPECT_TRUE(a.disable_wct_rec);
  EXPECT_FALSE(a.disable_Lalpha);
  EXPECT_FALSE(a.disable_Lf_enc);
  EXPECT_THROW(parse_ablation("Lgamma"), InvariantError);
}

TEST(Views, SentenceSplitsIntoWordsAndCharacters) {
  auto rng = detail::seeded({1});
  const StrokeSequence s = synth_sample(random_styles(1, 3)[0], "hi you", "w", rng);
  const SampleViews v = make_views(s);
  ASSERT_EQ(v.words.size(), 2u);
  EXPECT_EQ(v.words[0].text, "hi");
  EXPECT_EQ(v.words[1].text, "you");
  EXPECT_EQ(v.word_begin[1], 3u);
  EXPECT_EQ(v.chars.size(), 6u);
  EXPECT_EQ(v.chars[2].text, " ");
}

TEST(TotalLoss, TotalIsSumOfEnabledTerms) {
  DsdModel m = tiny_model();
  const auto data = corpus({"his", "to"});
  for (const Ablation ab : {Ablation{}, parse_ablation("Lalpha"), parse_ablation("Lbeta,wct_rec")}) {
    const LossBreakdown lb = total_loss(m, data, Alphabet::default_alphabet(), ab);
    EXPECT_NEAR(lb.total, lb.enabled_sum(), 1e-9 * std::abs(lb.total));
    for (std::size_t l = 0; l < 3; ++l)
      EXPECT_EQ(lb.at(static_cast<Level>(l), Method::fenc, Term::wct), 0.0);
  }
}

TEST(TotalLoss, NonLocTermsAreNonNegative) {
  DsdModel m = tiny_model(3);
  const LossBreakdown lb = total_loss(m, corpus({"thin"}), Alphabet::default_alphabet(), {});
  for (const auto& lv : lb.value)
    for (const auto& mv : lv)
      for (std::size_t t = 1; t < 5; ++t) EXPECT_GE(mv[t], 0.0);
}

TEST(TotalLoss, OneWordSentenceHasEqualWordAndSentenceTerms) {
  DsdModel m = tiny_model(4);
  const auto data = corpus({"his"}, 1);
  const LossBreakdown lb = total_loss(m, data, Alphabet::default_alphabet(), {});
  // Recompute the sentence level directly rather than through the shortcut.
  LossBreakdown direct;
  Tape t;
  const SampleViews v = make_views(data[0]);
  std::vector<Var> segs;
  for (const auto& c : v.chars) segs.push_back(m.encode_strokes(t, c));
  detail::view_loss(t, m, v.sentence, ad::concat_rows(segs), Alphabet::default_alphabet(), {}, Level::sentence,
                    direct);
  for (std::size_t mi = 0; mi < 3; ++mi)
    for (std::size_t ti = 0; ti < 5; ++ti) {
      EXPECT_EQ(lb.value[1][mi][ti], lb.value[2][mi][ti]);
      EXPECT_EQ(lb.value[2][mi][ti], direct.value[2][mi][ti]);
    }
}

TEST(TotalLoss, DisabledBetaLeavesRestorerWithoutGradient) {
  DsdModel m = tiny_model(5);
  m.params().zero_grad();
  total_loss(m, corpus({"his"}), Alphabet::default_alphabet(), parse_ablation("Lbeta"), true);
  for (const auto& p : m.params()) {
    double mx = 0.0;
    for (double g : p->grad) mx = std::max(mx, std::abs(g));
    if (p->name.rfind("h.", 0) == 0) EXPECT_EQ(mx, 0.0) << p->name;
    else EXPECT_GT(mx, 0.0) << p->name;
  }
  m.params().zero_grad();
  total_loss(m, corpus({"his"}), Alphabet::default_alphabet(), {}, true);
  double mx = 0.0;
  for (double g : m.params().at("h.lstm.l0.W").grad) mx = std::max(mx, std::abs(g));
  EXPECT_GT(mx, 0.0);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  DsdModel m = tiny_model(6);
  const auto data = corpus({"his"}, 2);
  auto loss = [&](Tape& t) {
    LossBreakdown lb;
    std::vector<Var> parts;
    for (const auto& s : data) parts.push_back(sample_loss(t, m, s, Alphabet::default_alphabet(), {}, lb));
    return ad::add_n(parts);
  };
  const auto r = fd::check_params(m.params(), loss, 2, 7);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst << ": " << r.worst_analytic << " vs " << r.worst_numeric;
}

TEST(TotalLoss, InverseChainMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int rep = 0; rep < 3; ++rep) {
    std::vector<Tensor> in;
    for (int k = 0; k < 3; ++k) {
      std::vector<double> c(64);
      for (double& v : c) v = u(rng);
      for (std::size_t i = 0; i < 8; ++i) c[i * 8 + i] += 4.0;
      in.push_back(Tensor::matrix(8, 8, c));
    }
    std::vector<double> w(24), target(24);
    for (double& v : w) v = u(rng);
    for (double& v : target) v = u(rng);
    in.push_back(Tensor::matrix(3, 8, w));
    auto f = [&](Tape& t, const std::vector<Var>& x) {
      std::vector<Var> cs(x.begin(), x.begin() + 3);
      Var wa = ad::reconstruct_alpha(cs, ad::mean_writer_dsd(cs, x[3]));
      return ad::squared_norm(ad::sub(wa, t.constant(3, 8, target)));
    };
    const auto r = grad_check(f, in, 1e-3, 1e-8, Stencil::central5);
    EXPECT_LT(r.max_rel_error, 1e-5);
  }
}

TEST(Train, DeterministicPerSeed) {
  const auto data = corpus({"his", "an"});
  TrainConfig cfg;
  cfg.steps = 4;
  cfg.batch = 2;
  cfg.seed = 9;
  DsdModel a = tiny_model(2), b = tiny_model(2);
  const auto ra = train(a, data, cfg), rb = train(b, data, cfg);
  EXPECT_EQ(ra.losses, rb.losses);
  auto ib = b.params().begin();
  for (const auto& p : a.params()) EXPECT_EQ(p->value, (*ib++)->value);
}

TEST(Train, LogsCheckpointsAndAblatedColumns) {
  const auto data = corpus({"his"});
  TrainConfig cfg;
  cfg.steps = 4;
  cfg.batch = 1;
  cfg.log_every = 2;
  cfg.checkpoint_every = 2;
  cfg.ablation = parse_ablation("Lbeta");
  DsdModel m = tiny_model();
  std::ostringstream log;
  const auto dir = scratch("dsd_train_test");
  train(m, data, cfg, TrainSink{&log, dir, false});
  std::istringstream in(log.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["step"], 2 * (n + 1));
    EXPECT_FALSE(j.contains("wall_time"));
    EXPECT_TRUE(j.contains("sentence.alpha.loc"));
    EXPECT_EQ(line.find(".beta."), std::string::npos);
    ++n;
  }
  EXPECT_EQ(n, 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "step_2" / "params.bin"));
  EXPECT_TRUE(std::filesystem::exists(dir / "step_4" / "params.bin"));
  EXPECT_EQ(read_checkpoint_meta(dir / "final").at("step"), "4");
  std::filesystem::remove_all(dir);
}

TEST(Train, NonFiniteLossAbortsWithDump) {
  const auto data = corpus({"his"});
  DsdModel m = tiny_model();
  m.params().at("dec.head.b").value[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.steps = 2;
  cfg.batch = 1;
  const auto dir = scratch("dsd_nan_test");
  EXPECT_THROW(train(m, data, cfg, TrainSink{nullptr, dir, false}), TrainingError);
  EXPECT_TRUE(std::filesystem::exists(dir / "nan_batch_step1.jsonl"));
  std::filesystem::remove_all(dir);
}

TEST(Train, RejectsUnlabelledData) {
  auto data = corpus({"his"});
  data[0].has_eoc = false;
  DsdModel m = tiny_model();
  EXPECT_THROW(train(m, data, TrainConfig{}), InvariantError);
  EXPECT_THROW(train(m, {}, TrainConfig{}), InvariantError);
}

TEST(Train, DeltaScaleIsPooledStd) {
  StrokeSequence s;
  s.points = {{1, -1, 1, 0}, {3, 1, 1, 0}};
  // values {1,-1,3,1}: mean 1, variance (0+4+4+0)/4 = 2
  EXPECT_NEAR(corpus_delta_scale({s}), std::sqrt(2.0), 1e-15);
}
