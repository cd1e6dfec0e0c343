#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsd/core/adam.hpp"
#include "dsd/core/error.hpp"
#include "dsd/core/tape.hpp"
#include "dsd/data/alphabet.hpp"
#include "dsd/data/dataset.hpp"
#include "dsd/data/stroke.hpp"
#include "dsd/model/dsd_model.hpp"
#include "dsd/train/losses.hpp"

namespace dsd {

enum class Level { character, word, sentence };
enum class Method { fenc, alpha, beta };
enum class Term { loc, eos, eoc, w, wct };

inline constexpr std::array<const char*, 3> kLevelNames = {"char", "word", "sentence"};
inline constexpr std::array<const char*, 3> kMethodNames = {"fenc", "alpha", "beta"};
inline constexpr std::array<const char*, 5> kTermNames = {"loc", "eos", "eoc", "w", "wct"};

struct Ablation {
  bool disable_Lf_enc = false;
  bool disable_Lalpha = false;
  bool disable_Lbeta = false;
  bool disable_wct_rec = false;

  bool method_enabled(Method m) const {
    switch (m) {
      case Method::fenc: return !disable_Lf_enc;
      case Method::alpha: return !disable_Lalpha;
      case Method::beta: return !disable_Lbeta;
    }
    return false;
  }

  bool enabled(Method m, Term t) const {
    if (!method_enabled(m)) return false;
    if (t == Term::wct) return !disable_wct_rec;
    return true;
  }
};

/// Comma-separated flag names: Lf_enc, Lalpha, Lbeta, wct_rec (an optional
/// "disable_" prefix is accepted).
inline Ablation parse_ablation(const std::string& list) {
  Ablation a;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::string k = item.rfind("disable_", 0) == 0 ? item.substr(8) : item;
    if (k == "Lf_enc") a.disable_Lf_enc = true;
    else if (k == "Lalpha") a.disable_Lalpha = true;
    else if (k == "Lbeta") a.disable_Lbeta = true;
    else if (k == "wct_rec") a.disable_wct_rec = true;
    else throw InvariantError("unknown ablation flag '" + item + "'");
  }
  return a;
}

struct LossBreakdown {
  // [level][method][term]
  std::array<std::array<std::array<double, 5>, 3>, 3> value{};
  double total = 0.0;
  Ablation ablation;

  double& at(Level l, Method m, Term t) {
    return value[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)][static_cast<std::size_t>(t)];
  }
  double at(Level l, Method m, Term t) const {
    return value[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)][static_cast<std::size_t>(t)];
  }

  /// Sum over levels of one method's term.
  double method_term(Method m, Term t) const {
    double s = 0.0;
    for (std::size_t l = 0; l < 3; ++l) s += at(static_cast<Level>(l), m, t);
    return s;
  }

  /// Sum of enabled components; equals `total` up to summation order.
  double enabled_sum() const {
    double s = 0.0;
    for (std::size_t l = 0; l < 3; ++l)
      for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t t = 0; t < 5; ++t)
          if (ablation.enabled(static_cast<Method>(m), static_cast<Term>(t))) s += value[l][m][t];
    return s;
  }

  void add(const LossBreakdown& o) {
    for (std::size_t l = 0; l < 3; ++l)
      for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t t = 0; t < 5; ++t) value[l][m][t] += o.value[l][m][t];
    total += o.total;
  }

  /// Enabled terms keyed "<level>.<method>.<term>".
  nlohmann::ordered_json terms_json() const {
    nlohmann::ordered_json j;
    for (std::size_t l = 0; l < 3; ++l)
      for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t t = 0; t < 5; ++t)
          if (ablation.enabled(static_cast<Method>(m), static_cast<Term>(t)))
            j[std::string(kLevelNames[l]) + "." + kMethodNames[m] + "." + kTermNames[t]] = value[l][m][t];
    return j;
  }
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 5;
  std::uint64_t seed = 0;
  std::size_t latent = 256;
  std::size_t components = 20;
  double learning_rate = 1e-3;
  double clip = 10.0;
  std::size_t checkpoint_every = 500;
  std::size_t log_every = 10;
  Ablation ablation;

  void check() const {
    if (steps == 0 || batch == 0) throw InvariantError("steps and batch must be positive");
    if (!(learning_rate > 0.0) || !(clip > 0.0)) throw InvariantError("learning rate and clip must be positive");
    if (checkpoint_every == 0 || log_every == 0) throw InvariantError("intervals must be positive");
  }

  AdamConfig adam() const {
    AdamConfig a;
    a.learning_rate = learning_rate;
    a.clip_lo = -clip;
    a.clip_hi = clip;
    return a;
  }
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Sentence sample plus its word and character crops. A sample without
/// spaces is its own single word.
struct SampleViews {
  StrokeSequence sentence;
  std::vector<StrokeSequence> words;
  std::vector<StrokeSequence> chars;
  std::vector<std::size_t> word_begin;  // first character index of each word
};

inline SampleViews make_views(const StrokeSequence& s) {
  validate(s);
  if (!s.has_eoc) throw InvariantError("training sample '" + s.text + "' has no eoc labels");
  SampleViews v;
  v.sentence = s;
  const auto cps = utf8_decode(s.text);
  for (std::size_t i = 0; i < cps.size(); ++i) v.chars.push_back(crop_characters(s, i, i + 1));
  std::size_t i = 0;
  while (i < cps.size()) {
    if (cps[i] == U' ') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < cps.size() && cps[j] != U' ') ++j;
    v.words.push_back(crop_characters(s, i, j));
    v.word_begin.push_back(i);
    i = j;
  }
  return v;
}

/// Pooled population standard deviation of all dx and dy.
inline double corpus_delta_scale(const std::vector<StrokeSequence>& samples) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : samples)
    for (const auto& p : s.points) {
      sum += p.dx + p.dy;
      sq += p.dx * p.dx + p.dy * p.dy;
      n += 2;
    }
  if (n == 0) throw InvariantError("corpus has no points");
  const double mean = sum / static_cast<double>(n);
  const double var = sq / static_cast<double>(n) - mean * mean;
  return var > 0.0 ? std::sqrt(var) : 1.0;
}

namespace detail {

/// All three paths for one view. `segs` holds the per-character segment
/// DSDs (M x L). Adds the view's terms into `out` at `level` and returns
/// the enabled sum.
inline ad::Var view_loss(ad::Tape& t, DsdModel& model, const StrokeSequence& x, ad::Var segs,
                         const Alphabet& alphabet, const Ablation& ab, Level level, LossBreakdown& out) {
  const std::size_t K = model.config().components;
  const auto tg = model.targets(x);
  // A character view's own encoding is its segment DSD.
  ad::Var w = level == Level::character ? segs : model.encode_strokes(t, x);
  auto cs = model.char_dsd(t, alphabet.indices(x.text));
  auto inv = ad::invert_all(cs);
  auto cands = ad::apply_inverses(inv, w);
  ad::Var a = model.decoder_points(t, x);
  std::vector<ad::Var> enabled;

  auto record = [&](Method m, Term term, ad::Var v) {
    out.at(level, m, term) += v.item();
    if (ab.enabled(m, term)) enabled.push_back(v);
  };
  auto path = [&](Method m, ad::Var wct, const std::vector<ad::Var>& candidates) {
    ad::Var l = ad::mdn_losses(model.teacher_forced(t, x, a, wct), tg, K);
    record(m, Term::loc, ad::slice_cols(l, 0, 1));
    record(m, Term::eos, ad::slice_cols(l, 1, 1));
    record(m, Term::eoc, ad::slice_cols(l, 2, 1));
    record(m, Term::w, ad::loss_w_consistency(candidates));
    if (m != Method::fenc && ab.enabled(m, Term::wct))
      record(m, Term::wct, ad::loss_wct_reconstruction(w, wct));
  };

  if (ab.method_enabled(Method::fenc)) path(Method::fenc, w, cands);
  if (ab.method_enabled(Method::alpha)) {
    ad::Var wa = ad::reconstruct_alpha(cs, ad::mean_of(cands));
    path(Method::alpha, wa, ad::apply_inverses(inv, wa));
  }
  if (ab.method_enabled(Method::beta)) {
    ad::Var wb = model.relink(t, segs);
    path(Method::beta, wb, ad::apply_inverses(inv, wb));
  }
  if (enabled.empty()) return t.scalar(0.0);
  return ad::add_n(enabled);
}

}  // namespace detail

/// Loss of one sample summed over character, word and sentence views.
/// Terms are added into `out`.
inline ad::Var sample_loss(ad::Tape& t, DsdModel& model, const StrokeSequence& sample, const Alphabet& alphabet,
                           const Ablation& ab, LossBreakdown& out) {
  const SampleViews v = make_views(sample);
  LossBreakdown part;
  part.ablation = ab;
  std::vector<ad::Var> parts, char_w;
  for (const auto& c : v.chars) {
    ad::Var w = model.encode_strokes(t, c);
    char_w.push_back(w);
    parts.push_back(detail::view_loss(t, model, c, w, alphabet, ab, Level::character, part));
  }
  ad::Var segs = ad::concat_rows(char_w);
  const bool one_word = v.words.size() == 1 && v.words[0].size() == v.sentence.size();
  for (std::size_t i = 0; i < v.words.size(); ++i) {
    ad::Var ws = ad::slice_rows(segs, v.word_begin[i], utf8_length(v.words[i].text));
    parts.push_back(detail::view_loss(t, model, v.words[i], ws, alphabet, ab, Level::word, part));
  }
  if (one_word) {
    // The sentence view is the word view; count it again rather than recompute.
    for (std::size_t m = 0; m < 3; ++m) part.value[2][m] = part.value[1][m];
    parts.push_back(parts.back());
  } else {
    parts.push_back(detail::view_loss(t, model, v.sentence, segs, alphabet, ab, Level::sentence, part));
  }
  ad::Var total = ad::add_n(parts);
  part.total = total.item();
  out.add(part);
  return total;
}

/// Sum over the batch, accumulating parameter gradients when `backward`.
inline LossBreakdown total_loss(DsdModel& model, const std::vector<StrokeSequence>& batch,
                                const Alphabet& alphabet, const Ablation& ab, bool backward = false) {
  LossBreakdown sum;
  sum.ablation = ab;
  for (const auto& s : batch) {
    ad::Tape t;
    ad::Var l = sample_loss(t, model, s, alphabet, ab, sum);
    if (backward && std::isfinite(l.item())) t.backward(l);
  }
  return sum;
}

struct TrainSink {
  std::ostream* log = nullptr;
  std::filesystem::path out_dir;  // checkpoints and NaN dumps; empty disables
  bool wall_time = true;
};

struct TrainResult {
  std::vector<double> losses;  // batch total per step
  std::size_t steps = 0;
};

inline std::string format_double(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

/// Batches of `cfg.batch` samples drawn uniformly with a seeded generator;
/// Adam with elementwise gradient clipping. Aborts on a non-finite loss after
/// dumping the offending batch.
inline TrainResult train(DsdModel& model, const std::vector<StrokeSequence>& data, const TrainConfig& cfg,
                         const TrainSink& sink = {},
                         const std::function<void(std::size_t, const LossBreakdown&)>& on_step = {}) {
  cfg.check();
  if (data.empty()) throw InvariantError("training dataset is empty");
  for (const auto& s : data)
    if (!s.has_eoc) throw InvariantError("training sample '" + s.text + "' has no eoc labels");
  const Alphabet& alphabet = Alphabet::default_alphabet();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  OptimizerState opt(cfg.adam());
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res;
  auto checkpoint = [&](const std::string& name, std::size_t step) {
    if (sink.out_dir.empty()) return;
    model.save(sink.out_dir / name, {{"step", std::to_string(step)}, {"seed", std::to_string(cfg.seed)}});
  };
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<StrokeSequence> batch;
    for (std::size_t b = 0; b < cfg.batch; ++b) batch.push_back(data[pick(rng)]);
    model.params().zero_grad();
    const LossBreakdown lb = total_loss(model, batch, alphabet, cfg.ablation, true);
    if (!std::isfinite(lb.total)) {
      std::string where;
      if (!sink.out_dir.empty()) {
        std::filesystem::create_directories(sink.out_dir);
        const auto dump = sink.out_dir / ("nan_batch_step" + std::to_string(step) + ".jsonl");
        write_dataset(dump, batch);
        where = "; batch written to " + dump.string();
      }
      std::string texts;
      for (const auto& s : batch) texts += (texts.empty() ? "" : ", ") + s.writer_id + ":'" + s.text + "'";
      throw TrainingError("non-finite loss at step " + std::to_string(step) + " on batch [" + texts + "]" + where);
    }
    opt.step(model.params());
    res.losses.push_back(lb.total);
    res.steps = step;
    if (on_step) on_step(step, lb);
    if (sink.log && (step % cfg.log_every == 0 || step == cfg.steps)) {
      nlohmann::ordered_json rec;
      rec["step"] = step;
      rec["total"] = lb.total;
      const auto terms = lb.terms_json();
      for (const auto& [k, v] : terms.items()) rec[k] = v;
      if (sink.wall_time)
        rec["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *sink.log << rec.dump() << '\n';
      sink.log->flush();
    }
    if (step % cfg.checkpoint_every == 0) checkpoint("step_" + std::to_string(step), step);
  }
  checkpoint("final", cfg.steps);
  return res;
}

}  // namespace dsd
