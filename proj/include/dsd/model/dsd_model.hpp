#pragma once

// The factorized model. Shapes, with L the latent size and M characters:
//   f_enc   points (N x 3) -> point FC -> LSTM x3 -> N x L; rows at eoc = w_ct
//   g       one-hot (M x Q) -> FC1 -> LSTM x3 -> c_raw (M x L) -> FC2 -> M of L x L
//   h       segment DSDs (T x L) -> LSTM x3 -> T x L
//   f_dec   previous point -> point FC -> LSTM_a x3 (L); [a_t, w_ct] -> LSTM_b x3 (2L) -> MDN head
// Writer vectors are L x 1 columns in the algebra and 1 x L rows elsewhere.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dsd/core/checkpoint.hpp"
#include "dsd/core/error.hpp"
#include "dsd/core/linalg.hpp"
#include "dsd/core/lstm.hpp"
#include "dsd/core/params.hpp"
#include "dsd/core/tape.hpp"
#include "dsd/data/stroke.hpp"
#include "dsd/model/mdn.hpp"

namespace dsd {

struct DsdConfig {
  std::size_t latent = 256;       // L
  std::size_t components = 20;    // K
  std::size_t num_classes = 87;   // Q, one-hot width (characters + blank)
  std::size_t layers = 3;

  void check() const {
    if (latent == 0 || components == 0 || num_classes == 0 || layers == 0)
      throw InvariantError("model dimensions must be positive");
  }
};

struct DecodeResult {
  StrokeSequence sequence;
  bool truncated = false;
};

class DsdModel {
 public:
  DsdModel(const DsdConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.check();
    const std::size_t L = cfg.latent, Q = cfg.num_classes, n = cfg.layers;
    enc_fc_w_ = &store_.add("enc.fc.W", 3, L);
    enc_fc_b_ = &store_.add("enc.fc.b", 1, L);
    enc_ = LstmParams::create(store_, "enc.lstm", L, L, n);
    g_fc1_w_ = &store_.add("g.fc1.W", Q, L);
    g_fc1_b_ = &store_.add("g.fc1.b", 1, L);
    g_lstm_ = LstmParams::create(store_, "g.lstm", L, L, n);
    g_fc2_w_ = &store_.add("g.fc2.W", L, L * L);
    g_fc2_b_ = &store_.add("g.fc2.b", 1, L * L);
    h_ = LstmParams::create(store_, "h.lstm", L, L, n);
    dec_fc_w_ = &store_.add("dec.fc.W", 3, L);
    dec_fc_b_ = &store_.add("dec.fc.b", 1, L);
    dec_a_ = LstmParams::create(store_, "dec.lstm_a", L, L, n);
    dec_b_ = LstmParams::create(store_, "dec.lstm_b", 2 * L, 2 * L, n, true);
    head_w_ = &store_.add("dec.head.W", 2 * L, mdn_width(cfg.components));
    head_b_ = &store_.add("dec.head.b", 1, mdn_width(cfg.components));

    std::mt19937_64 rng(seed);
    init_uniform_fan_in(*enc_fc_w_, 3, rng);
    enc_.init(rng);
    init_uniform_fan_in(*g_fc1_w_, Q, rng);
    g_lstm_.init(rng);
    init_uniform_fan_in(*g_fc2_w_, L, rng);
    // C starts near the identity so early inverses are well conditioned.
    for (std::size_t i = 0; i < L; ++i) g_fc2_b_->value[i * L + i] = 1.0;
    h_.init(rng);
    init_uniform_fan_in(*dec_fc_w_, 3, rng);
    dec_a_.init(rng);
    dec_b_.init(rng);
    init_uniform_fan_in(*head_w_, 2 * L, rng);
  }

  const DsdConfig& config() const noexcept { return cfg_; }
  std::size_t latent() const noexcept { return cfg_.latent; }
  ParameterStore& params() noexcept { return store_; }
  const ParameterStore& params() const noexcept { return store_; }

  /// Deltas are divided by this before entering the network and multiplied
  /// back on output.
  double delta_scale() const noexcept { return delta_scale_; }
  void set_delta_scale(double s) {
    if (!(s > 0.0) || !std::isfinite(s)) throw InvariantError("delta scale must be positive");
    delta_scale_ = s;
  }

  // ---- f_enc ----

  /// N x 3 rows (dx, dy, eos) in network units.
  std::vector<double> point_rows(const StrokeSequence& x) const {
    std::vector<double> v;
    v.reserve(3 * x.size());
    for (const auto& p : x.points) {
      v.push_back(p.dx / delta_scale_);
      v.push_back(p.dy / delta_scale_);
      v.push_back(p.eos);
    }
    return v;
  }

  /// Hidden state after every point, N x L.
  ad::Var encode(ad::Tape& t, const StrokeSequence& x) {
    if (x.points.empty()) throw InvariantError("encode: empty sequence");
    ad::Var in = t.constant(x.size(), 3, point_rows(x));
    ad::Var e = ad::affine(in, t.param(*enc_fc_w_), t.param(*enc_fc_b_));
    return ad::lstm_forward(e, enc_);
  }

  /// M x L; row t is w_{c_1..c_t}, the hidden state at the t-th eoc point.
  ad::Var encode_strokes(ad::Tape& t, const StrokeSequence& x) {
    validate(x);
    const auto idx = eoc_indices(x);
    if (idx.empty()) throw InvariantError("encode_strokes: no eoc points");
    return ad::gather_rows(encode(t, x), idx);
  }

  /// One DSD per character, each encoded from that character's crop alone
  /// (the segment DSDs fed to h). M x L.
  ad::Var encode_segments(ad::Tape& t, const StrokeSequence& x) {
    const std::size_t m = eoc_indices(x).size();
    std::vector<ad::Var> rows;
    for (std::size_t i = 0; i < m; ++i) {
      const StrokeSequence crop = crop_characters(x, i, i + 1);
      ad::Var h = encode(t, crop);
      rows.push_back(ad::slice_rows(h, h.rows() - 1, 1));
    }
    return ad::concat_rows(rows);
  }

  // ---- g ----

  /// c_raw for every prefix, M x L, each entry in (-1, 1).
  ad::Var char_raw(ad::Tape& t, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw InvariantError("char_dsd: empty character sequence");
    for (auto i : indices)
      if (i >= cfg_.num_classes) throw ShapeError("char_dsd: class index out of range");
    // FC1 on a one-hot row is a row lookup.
    ad::Var c = ad::add_row(ad::gather_rows(t.param(*g_fc1_w_), indices), t.param(*g_fc1_b_));
    return ad::lstm_forward(c, g_lstm_);
  }

  /// FC2 and reshape for each row of `raw`.
  std::vector<ad::Var> char_matrices(ad::Tape& t, ad::Var raw) {
    const std::size_t L = cfg_.latent;
    ad::Var flat = ad::affine(raw, t.param(*g_fc2_w_), t.param(*g_fc2_b_));
    std::vector<ad::Var> out;
    for (std::size_t r = 0; r < raw.rows(); ++r) out.push_back(ad::reshape(ad::slice_rows(flat, r, 1), L, L));
    return out;
  }

  std::vector<ad::Var> char_dsd(ad::Tape& t, const std::vector<std::size_t>& indices) {
    return char_matrices(t, char_raw(t, indices));
  }

  // ---- h ----

  /// Row t is h([segs_0 .. segs_t]); the restorer is causal so one pass
  /// yields every prefix.
  ad::Var relink(ad::Tape& t, ad::Var segs) {
    (void)t;
    return ad::lstm_forward(segs, h_);
  }

  ad::Var reconstruct_beta(ad::Tape& t, ad::Var segs) {
    if (segs.rows() == 0) throw InvariantError("reconstruct_beta: empty list");
    ad::Var all = relink(t, segs);
    return ad::slice_rows(all, all.rows() - 1, 1);
  }

  // ---- f_dec ----

  /// LSTM_a over the teacher-forced previous points, N x L.
  ad::Var decoder_points(ad::Tape& t, const StrokeSequence& x) {
    std::vector<double> prev(3 * x.size(), 0.0);
    const auto rows = point_rows(x);
    std::copy(rows.begin(), rows.end() - 3, prev.begin() + 3);
    ad::Var in = t.constant(x.size(), 3, std::move(prev));
    ad::Var e = ad::affine(in, t.param(*dec_fc_w_), t.param(*dec_fc_b_));
    return ad::lstm_forward(e, dec_a_);
  }

  /// Head rows from LSTM_a output and per-point conditioning rows (N x L).
  ad::Var decoder_head(ad::Tape& t, ad::Var a, ad::Var cond) {
    ad::Var b = ad::lstm_forward(ad::concat_cols({a, cond}), dec_b_);
    return ad::affine(b, t.param(*head_w_), t.param(*head_b_));
  }

  /// Teacher-forced head for `x` conditioned on per-character rows W (M x L).
  ad::Var teacher_forced(ad::Tape& t, const StrokeSequence& x, ad::Var a, ad::Var wct) {
    return decoder_head(t, a, ad::gather_rows(wct, point_char_index(x)));
  }

  /// N x 4 targets (dx, dy, eos, eoc) in network units.
  std::vector<double> targets(const StrokeSequence& x) const {
    std::vector<double> v;
    v.reserve(4 * x.size());
    for (const auto& p : x.points) {
      v.push_back(p.dx / delta_scale_);
      v.push_back(p.dy / delta_scale_);
      v.push_back(p.eos);
      v.push_back(p.eoc);
    }
    return v;
  }

  /// Autoregressive generation. Every character receives at least one point:
  /// eoc is read from the step that produced the point.
  DecodeResult decode_strokes(const std::vector<std::vector<double>>& wcts, std::mt19937_64& rng,
                              std::size_t max_steps, double temperature = 1.0) const {
    if (wcts.empty()) throw InvariantError("decode_strokes: no writer-character DSDs");
    if (max_steps == 0) throw InvariantError("decode_strokes: max_steps must be positive");
    const std::size_t L = cfg_.latent, K = cfg_.components, W = mdn_width(K);
    for (const auto& w : wcts)
      if (w.size() != L) throw ShapeError("decode_strokes: DSD length mismatch");
    LstmState sa = LstmState::zeros(dec_a_), sb = LstmState::zeros(dec_b_);
    std::vector<double> prev(3, 0.0), e(L), in(2 * L), head(W);
    DecodeResult res;
    res.sequence.has_eoc = true;
    std::size_t c = 0;
    for (std::size_t step = 0; step < max_steps && c < wcts.size(); ++step) {
      for (std::size_t j = 0; j < L; ++j) {
        e[j] = dec_fc_b_->value[j];
        for (std::size_t k = 0; k < 3; ++k) e[j] += prev[k] * dec_fc_w_->value[k * L + j];
      }
      const auto& a = lstm_step(dec_a_, sa, e);
      std::copy(a.begin(), a.end(), in.begin());
      std::copy(wcts[c].begin(), wcts[c].end(), in.begin() + static_cast<std::ptrdiff_t>(L));
      const auto& b = lstm_step(dec_b_, sb, in);
      std::copy(head_b_->value.begin(), head_b_->value.end(), head.begin());
      for (std::size_t j = 0; j < 2 * L; ++j) ad::detail::axpy(head.data(), head_w_->value.data() + j * W, b[j], W);
      const MdnStep s = mdn_step(head, K);
      const auto [dx, dy] = sample_mdn(s, rng, temperature);
      StrokePoint p;
      p.dx = dx * delta_scale_;
      p.dy = dy * delta_scale_;
      p.eos = s.eos_prob > 0.5 ? 1 : 0;
      p.eoc = s.eoc_prob > 0.5 ? 1 : 0;
      if (p.eoc) ++c;
      res.sequence.points.push_back(p);
      prev = {dx, dy, static_cast<double>(p.eos)};
    }
    if (c < wcts.size()) {
      res.truncated = true;
      res.sequence.has_eoc = false;
    }
    return res;
  }

  // ---- persistence ----

  CheckpointMeta meta() const {
    std::ostringstream ds;
    ds.precision(17);
    ds << delta_scale_;
    return {{"latent", std::to_string(cfg_.latent)},
            {"components", std::to_string(cfg_.components)},
            {"num_classes", std::to_string(cfg_.num_classes)},
            {"layers", std::to_string(cfg_.layers)},
            {"delta_scale", ds.str()}};
  }

  void save(const std::filesystem::path& dir, CheckpointMeta extra = {}) const {
    CheckpointMeta m = meta();
    m.insert(extra.begin(), extra.end());
    save_checkpoint(dir, store_, m);
  }

  static DsdModel load(const std::filesystem::path& dir) {
    const CheckpointMeta m = read_checkpoint_meta(dir);
    auto get = [&](const std::string& k) {
      auto it = m.find(k);
      if (it == m.end()) throw ParseError("checkpoint missing meta " + k);
      return it->second;
    };
    DsdConfig cfg;
    cfg.latent = std::stoul(get("latent"));
    cfg.components = std::stoul(get("components"));
    cfg.num_classes = std::stoul(get("num_classes"));
    cfg.layers = std::stoul(get("layers"));
    DsdModel model(cfg, 0);
    load_checkpoint(dir, model.store_);
    model.set_delta_scale(std::stod(get("delta_scale")));
    return model;
  }

 private:
  DsdConfig cfg_;
  ParameterStore store_;
  double delta_scale_ = 1.0;
  Parameter *enc_fc_w_ = nullptr, *enc_fc_b_ = nullptr;
  Parameter *g_fc1_w_ = nullptr, *g_fc1_b_ = nullptr, *g_fc2_w_ = nullptr, *g_fc2_b_ = nullptr;
  Parameter *dec_fc_w_ = nullptr, *dec_fc_b_ = nullptr, *head_w_ = nullptr, *head_b_ = nullptr;
  LstmParams enc_, g_lstm_, h_, dec_a_, dec_b_;
};

// ---- algebra connecting the factors ----

namespace ad {

/// Row t of an M x L matrix as an L x 1 column.
inline Var column(Var rows, std::size_t t) { return transpose(slice_rows(rows, t, 1)); }

/// C_t^-1 for each t. Singular C raises SingularMatrixError carrying t.
inline std::vector<Var> invert_all(const std::vector<Var>& cs) {
  std::vector<Var> out;
  for (std::size_t t = 0; t < cs.size(); ++t) {
    try {
      out.push_back(inverse(cs[t]));
    } catch (const SingularMatrixError& e) {
      throw SingularMatrixError(std::string(e.what()) + " (character " + std::to_string(t) + ")", t);
    }
  }
  return out;
}

/// C_t^-1 w_t for each row t of `wct`, given the inverses.
inline std::vector<Var> apply_inverses(const std::vector<Var>& inverses, Var wct) {
  if (inverses.size() != wct.rows()) throw ShapeError("writer candidates: length mismatch");
  std::vector<Var> out;
  for (std::size_t t = 0; t < inverses.size(); ++t) out.push_back(matmul(inverses[t], column(wct, t)));
  return out;
}

inline std::vector<Var> writer_candidates(const std::vector<Var>& cs, Var wct) {
  if (cs.size() != wct.rows()) throw ShapeError("writer candidates: length mismatch");
  return apply_inverses(invert_all(cs), wct);
}

inline Var mean_of(const std::vector<Var>& xs) {
  if (xs.empty()) throw InvariantError("mean of empty list");
  return scale(add_n(xs), 1.0 / static_cast<double>(xs.size()));
}

/// w_bar = (1/M) sum_t C_t^-1 w_t, as an L x 1 column.
inline Var mean_writer_dsd(const std::vector<Var>& cs, Var wct) { return mean_of(writer_candidates(cs, wct)); }

/// C_t w_bar for each t, stacked as M x L rows.
inline Var reconstruct_alpha(const std::vector<Var>& cs, Var wbar) {
  std::vector<Var> rows;
  for (const auto& c : cs) rows.push_back(transpose(matmul(c, wbar)));
  return concat_rows(rows);
}

}  // namespace ad

/// Tape-free helpers on plain values.
inline std::vector<double> row_of(const ad::Var& v, std::size_t r) {
  auto val = v.value();
  const std::size_t c = v.cols();
  return std::vector<double>(val.begin() + static_cast<std::ptrdiff_t>(r * c),
                             val.begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
}

}  // namespace dsd
