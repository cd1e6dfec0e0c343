#pragma once

// Procedural handwriting: lower-case polyline glyphs placed on a baseline and
// distorted per writer (slant, scale, width, spacing, control-point jitter)
// and per sample (point noise).

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/data/stroke.hpp"
#include "dsd/data/utf8.hpp"

namespace dsd {

/// Pixels per x-height unit at scale 1.
inline constexpr double kGlyphUnit = 20.0;

struct Glyph {
  /// Strokes in x-height units, baseline at y = 0, y up.
  std::vector<std::vector<Point2>> strokes;
  double width = 0.0;
};

inline const std::map<char32_t, Glyph>& glyph_templates() {
  static const std::map<char32_t, Glyph> g = [] {
    std::map<char32_t, Glyph> m;
    auto add = [&](char32_t c, double w, std::vector<std::vector<Point2>> s) { m[c] = Glyph{std::move(s), w}; };
    add(U'a', 0.9, {{{0.8, 0.8}, {0.5, 1.0}, {0.1, 0.7}, {0.1, 0.2}, {0.4, 0.0}, {0.8, 0.3}, {0.8, 1.0}, {0.8, 0.0}}});
    add(U'b', 0.8, {{{0.1, 1.8}, {0.1, 0.0}, {0.1, 0.5}, {0.4, 0.9}, {0.8, 0.6}, {0.7, 0.1}, {0.3, 0.0}, {0.1, 0.2}}});
    add(U'c', 0.8, {{{0.8, 0.8}, {0.4, 1.0}, {0.1, 0.6}, {0.2, 0.1}, {0.5, 0.0}, {0.8, 0.2}}});
    add(U'd', 0.8, {{{0.7, 0.8}, {0.4, 1.0}, {0.1, 0.6}, {0.2, 0.1}, {0.5, 0.0}, {0.7, 0.3}, {0.7, 1.8}, {0.7, 0.0}}});
    add(U'e', 0.8, {{{0.1, 0.5}, {0.8, 0.5}, {0.7, 0.9}, {0.4, 1.0}, {0.1, 0.6}, {0.2, 0.1}, {0.5, 0.0}, {0.8, 0.2}}});
    add(U'f', 0.7, {{{0.7, 1.6}, {0.5, 1.8}, {0.3, 1.6}, {0.3, 0.0}}, {{0.0, 1.0}, {0.6, 1.0}}});
    add(U'g', 0.8, {{{0.7, 0.8}, {0.4, 1.0}, {0.1, 0.7}, {0.3, 0.4}, {0.7, 0.6}, {0.7, 1.0}, {0.7, -0.5}, {0.4, -0.7}, {0.1, -0.5}}});
    add(U'h', 0.8, {{{0.1, 1.8}, {0.1, 0.0}, {0.1, 0.6}, {0.4, 1.0}, {0.7, 0.8}, {0.7, 0.0}}});
    add(U'i', 0.4, {{{0.2, 1.0}, {0.2, 0.0}}, {{0.2, 1.4}, {0.25, 1.45}}});
    add(U'j', 0.5, {{{0.4, 1.0}, {0.4, -0.5}, {0.2, -0.7}, {0.0, -0.5}}, {{0.4, 1.4}, {0.45, 1.45}}});
    add(U'k', 0.7, {{{0.1, 1.8}, {0.1, 0.0}}, {{0.7, 1.0}, {0.1, 0.4}, {0.7, 0.0}}});
    add(U'l', 0.4, {{{0.2, 1.8}, {0.2, 0.1}, {0.4, 0.0}}});
    add(U'm', 1.0, {{{0.1, 1.0}, {0.1, 0.0}, {0.1, 0.7}, {0.4, 1.0}, {0.5, 0.7}, {0.5, 0.0}, {0.5, 0.7}, {0.8, 1.0}, {0.9, 0.7}, {0.9, 0.0}}});
    add(U'n', 0.8, {{{0.1, 1.0}, {0.1, 0.0}, {0.1, 0.7}, {0.4, 1.0}, {0.7, 0.7}, {0.7, 0.0}}});
    add(U'o', 0.8, {{{0.4, 1.0}, {0.1, 0.6}, {0.2, 0.1}, {0.5, 0.0}, {0.8, 0.4}, {0.7, 0.9}, {0.4, 1.0}}});
    add(U'p', 0.8, {{{0.1, 1.0}, {0.1, -0.7}, {0.1, 0.6}, {0.4, 1.0}, {0.8, 0.6}, {0.6, 0.1}, {0.1, 0.2}}});
    add(U'q', 0.9, {{{0.7, 0.8}, {0.4, 1.0}, {0.1, 0.6}, {0.3, 0.1}, {0.7, 0.3}, {0.7, 1.0}, {0.7, -0.7}, {0.9, -0.5}}});
    add(U'r', 0.7, {{{0.1, 1.0}, {0.1, 0.0}, {0.1, 0.6}, {0.4, 1.0}, {0.7, 0.9}}});
    add(U's', 0.7, {{{0.7, 0.9}, {0.4, 1.0}, {0.1, 0.8}, {0.4, 0.5}, {0.7, 0.2}, {0.4, 0.0}, {0.1, 0.1}}});
    add(U't', 0.6, {{{0.3, 1.6}, {0.3, 0.1}, {0.5, 0.0}}, {{0.0, 1.0}, {0.6, 1.0}}});
    add(U'u', 0.8, {{{0.1, 1.0}, {0.1, 0.2}, {0.4, 0.0}, {0.7, 0.3}, {0.7, 1.0}, {0.7, 0.0}}});
    add(U'v', 0.7, {{{0.0, 1.0}, {0.35, 0.0}, {0.7, 1.0}}});
    add(U'w', 1.0, {{{0.0, 1.0}, {0.25, 0.0}, {0.5, 0.8}, {0.75, 0.0}, {1.0, 1.0}}});
    add(U'x', 0.7, {{{0.0, 1.0}, {0.7, 0.0}}, {{0.7, 1.0}, {0.0, 0.0}}});
    add(U'y', 0.7, {{{0.0, 1.0}, {0.35, 0.0}}, {{0.7, 1.0}, {0.3, -0.5}, {0.1, -0.7}}});
    add(U'z', 0.7, {{{0.0, 1.0}, {0.7, 1.0}, {0.0, 0.0}, {0.7, 0.0}}});
    return m;
  }();
  return g;
}

/// Horizontal advance of a space, in units.
inline constexpr double kSpaceWidth = 0.6;

struct SyntheticWriterStyle {
  double slant = 0.0;    // radians, positive leans right
  double scale = 1.0;
  double spacing = 0.2;  // extra gap between characters, units
  double width = 1.0;    // horizontal stretch
  double jitter = 0.0;   // std of per-writer control-point offsets, units
  std::uint64_t jitter_seed = 0;
  double noise = 0.0;    // std of per-sample point noise, units
  bool cursive = false;  // no pen lift between adjacent letters

  void check() const {
    if (!(scale > 0.0)) throw InvariantError("style scale must be positive");
    if (!(spacing >= 0.0)) throw InvariantError("style spacing must be non-negative");
    if (!(width > 0.0)) throw InvariantError("style width must be positive");
    if (jitter < 0.0 || noise < 0.0) throw InvariantError("style jitter/noise must be non-negative");
  }
};

namespace detail {

inline std::mt19937_64 seeded(std::initializer_list<std::uint64_t> parts) {
  std::seed_seq seq(parts.begin(), parts.end());
  return std::mt19937_64(seq);
}

// Writer-specific control-point offsets for one glyph (stable per character).
inline std::vector<Point2> glyph_jitter(const SyntheticWriterStyle& st, char32_t c, std::size_t n) {
  std::vector<Point2> off(n);
  if (st.jitter == 0.0) return off;
  auto rng = seeded({st.jitter_seed, static_cast<std::uint64_t>(c)});
  std::normal_distribution<double> d(0.0, st.jitter);
  for (auto& o : off) {
    o.x = d(rng);
    o.y = d(rng);
  }
  return off;
}

}  // namespace detail

/// Renders one line of text. `rng` drives per-sample noise only.
inline StrokeSequence synth_sample(const SyntheticWriterStyle& st, const std::string& text,
                                   const std::string& writer_id, std::mt19937_64& rng) {
  st.check();
  const auto cps = utf8_decode(text);
  if (cps.empty()) throw InvariantError("synth_sample: empty text");
  const auto& glyphs = glyph_templates();
  const double shear = std::tan(st.slant);
  std::normal_distribution<double> noise(0.0, 1.0);

  StrokeSequence s;
  s.writer_id = writer_id;
  s.text = text;
  s.has_eoc = true;
  Point2 prev{};  // origin: left edge of the line on the baseline
  double cursor = 0.5;
  auto emit = [&](double ux, double uy, bool eos, bool eoc) {
    const Point2 px{st.scale * (kGlyphUnit * ux), -(st.scale * (kGlyphUnit * uy))};
    s.points.push_back(StrokePoint{px.x - prev.x, px.y - prev.y, static_cast<std::uint8_t>(eos),
                                   static_cast<std::uint8_t>(eoc)});
    prev = px;
  };

  for (std::size_t ci = 0; ci < cps.size(); ++ci) {
    const char32_t c = cps[ci];
    if (c == U' ') {
      emit(cursor + 0.5 * kSpaceWidth, 0.0, true, true);
      cursor += kSpaceWidth + st.spacing;
      continue;
    }
    auto it = glyphs.find(c);
    if (it == glyphs.end()) throw UnknownCharacterError(c, ci);
    const Glyph& g = it->second;
    std::size_t npts = 0;
    for (const auto& stroke : g.strokes) npts += stroke.size();
    const auto jit = detail::glyph_jitter(st, c, npts);
    const bool join_next = st.cursive && ci + 1 < cps.size() && cps[ci + 1] != U' ';
    std::size_t k = 0;
    for (std::size_t si = 0; si < g.strokes.size(); ++si) {
      const auto& stroke = g.strokes[si];
      for (std::size_t pi = 0; pi < stroke.size(); ++pi, ++k) {
        double u = stroke[pi].x + jit[k].x;
        double v = stroke[pi].y + jit[k].y;
        if (st.noise > 0.0) {
          u += st.noise * noise(rng);
          v += st.noise * noise(rng);
        }
        const bool last_pt = pi + 1 == stroke.size();
        const bool last_stroke = si + 1 == g.strokes.size();
        const bool eos = last_pt && !(last_stroke && join_next);
        emit(cursor + st.width * u + shear * v, v, eos, last_pt && last_stroke);
      }
    }
    cursor += st.width * g.width + st.spacing;
  }
  return s;
}

inline std::string synth_writer_id(std::size_t w) {
  std::string n = std::to_string(w);
  if (n.size() < 2) n = "0" + n;
  return "writer_" + n;
}

/// Every writer writes every word. Sample noise is seeded per (seed, writer, word).
inline std::vector<StrokeSequence> synth_corpus(const std::vector<SyntheticWriterStyle>& styles,
                                                const std::vector<std::string>& words,
                                                std::uint64_t seed) {
  if (styles.empty() || words.empty()) throw InvariantError("synth_corpus: need styles and words");
  std::vector<StrokeSequence> out;
  for (std::size_t w = 0; w < styles.size(); ++w) {
    for (std::size_t k = 0; k < words.size(); ++k) {
      auto rng = detail::seeded({seed, w, k});
      out.push_back(synth_sample(styles[w], words[k], synth_writer_id(w), rng));
    }
  }
  return out;
}

/// Random but well-separated writer styles.
inline std::vector<SyntheticWriterStyle> random_styles(std::size_t n, std::uint64_t seed) {
  auto rng = detail::seeded({seed, 0x5157u});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SyntheticWriterStyle> out;
  for (std::size_t i = 0; i < n; ++i) {
    SyntheticWriterStyle st;
    st.slant = -0.35 + 0.7 * u(rng);
    st.scale = 0.8 + 0.45 * u(rng);
    st.spacing = 0.05 + 0.45 * u(rng);
    st.width = 0.8 + 0.4 * u(rng);
    st.jitter = 0.03 + 0.05 * u(rng);
    st.jitter_seed = rng();
    st.noise = 0.015;
    out.push_back(st);
  }
  return out;
}

/// Random lower-case strings, for training the segmenter on a vocabulary it
/// cannot memorize. Includes each single letter once.
inline std::vector<std::string> random_letter_strings(std::size_t n, std::size_t min_len, std::size_t max_len,
                                                      std::uint64_t seed) {
  if (min_len == 0 || min_len > max_len) throw InvariantError("random_letter_strings: bad length range");
  auto rng = detail::seeded({seed, 0x5e9u});
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<int> letter(0, 25);
  std::vector<std::string> out;
  for (char c = 'a'; c <= 'z'; ++c) out.emplace_back(1, c);
  for (std::size_t i = 0; i < n; ++i) {
    std::string w(len(rng), 'a');
    for (char& c : w) c = static_cast<char>('a' + letter(rng));
    out.push_back(std::move(w));
  }
  return out;
}

inline const std::vector<std::string>& default_words() {
  static const std::vector<std::string> w = {
      "the",  "and",  "his",  "her",  "thin", "that", "with", "for",  "was",  "not",  "you",
      "are",  "but",  "had",  "one",  "all",  "she",  "him",  "they", "have", "from", "this",
      "which", "when", "were", "what", "there", "said", "been", "more", "into", "them", "time",
      "like", "then", "only", "some", "could", "would", "other", "make", "over", "just", "know",
      "well", "back", "good", "much", "way",  "day",  "new",  "old",  "quiz", "jump", "fox",
      "lazy", "dog",  "box",  "vex",  "king", "pay",  "zero", "wax",  "joy",  "big",  "cup",
      "hat",  "map",  "sun",  "red",  "yes",  "ink",  "oak",  "elm",  "fig",  "jam",
      "gem",  "hum",  "kite", "quip"};
  return w;
}

}  // namespace dsd
