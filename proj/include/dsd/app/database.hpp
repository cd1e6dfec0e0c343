#pragma once

// Substring-keyed store of writer-character-DSD arrays and the greedy cover
// plus restorer re-linking that turns it into conditioning for a target text.

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/core/tape.hpp"
#include "dsd/data/alphabet.hpp"
#include "dsd/data/stroke.hpp"
#include "dsd/model/dsd_model.hpp"

namespace dsd {

using Vec = std::vector<double>;

struct DatabaseEntry {
  std::vector<Vec> wcts;  // [w_{c_1}, ..., w_{c_t}] for the key's prefixes
  std::size_t sample = 0;
  std::size_t first_char = 0;
};

struct DsdDatabase {
  std::map<std::u32string, std::vector<DatabaseEntry>> entries;
  Vec mean_writer;          // w_bar
  std::size_t candidates = 0;  // number of C^-1 w terms averaged into w_bar
  std::vector<std::string> log;

  bool contains(const std::u32string& key) const { return entries.contains(key); }
  /// First stored array for `key`.
  const DatabaseEntry& at(const std::u32string& key) const {
    auto it = entries.find(key);
    if (it == entries.end()) throw InvariantError("database has no key '" + utf8_encode(key) + "'");
    return it->second.front();
  }
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [k, v] : entries) n += v.size();
    return n;
  }
};

/// Character i of `s` may start a stored array when it is the first
/// character or the pen lifts at the end of character i - 1.
inline std::vector<bool> array_starts(const StrokeSequence& s) {
  const auto eoc = eoc_indices(s);
  std::vector<bool> ok(eoc.size(), true);
  for (std::size_t i = 1; i < eoc.size(); ++i) ok[i] = s.points[eoc[i - 1]].eos == 1;
  return ok;
}

inline DsdDatabase build_database(DsdModel& model, const std::vector<StrokeSequence>& samples,
                                  const Alphabet& alphabet = Alphabet::default_alphabet()) {
  if (samples.empty()) throw InvariantError("build_database: no samples");
  const std::size_t L = model.latent();
  DsdDatabase db;
  Vec sum(L, 0.0);
  for (std::size_t si = 0; si < samples.size(); ++si) {
    const StrokeSequence& s = samples[si];
    validate(s);
    if (!s.has_eoc) throw InvariantError("build_database: sample " + std::to_string(si) + " has no eoc labels");
    const std::u32string text = utf8_decode(s.text);
    const auto starts = array_starts(s);
    for (std::size_t i = 0; i < text.size(); ++i) {
      if (!starts[i]) continue;
      ad::Tape t;
      const StrokeSequence crop = crop_characters(s, i, text.size());
      ad::Var w = model.encode_strokes(t, crop);
      auto cs = model.char_dsd(t, alphabet.indices(crop.text));
      std::vector<Vec> rows;
      for (std::size_t r = 0; r < w.rows(); ++r) rows.push_back(row_of(w, r));
      for (std::size_t len = 1; len <= rows.size(); ++len)
        db.entries[text.substr(i, len)].push_back(
            DatabaseEntry{std::vector<Vec>(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(len)), si, i});
      for (std::size_t r = 0; r < rows.size(); ++r) {
        try {
          ad::Var c = ad::matmul(ad::inverse(cs[r]), ad::column(w, r));
          for (std::size_t k = 0; k < L; ++k) sum[k] += c.value()[k];
          ++db.candidates;
        } catch (const SingularMatrixError&) {
          db.log.push_back("skipped singular C for '" + utf8_encode(text.substr(i, r + 1)) + "' in sample " +
                           std::to_string(si));
        }
      }
    }
  }
  if (db.candidates == 0) throw SingularMatrixError("build_database: every C was singular");
  db.mean_writer = sum;
  for (double& v : db.mean_writer) v /= static_cast<double>(db.candidates);
  return db;
}

/// One segment of the cover: a stored array or a single fallback character.
struct CoverSegment {
  std::size_t begin = 0;
  std::u32string key;
  bool fallback = false;
  std::vector<Vec> wcts;
};

/// Labels of the inputs of one restorer call, e.g. {"t", "hi"}.
struct RelinkCall {
  std::vector<std::string> inputs;
};

struct SamplingTrace {
  std::vector<CoverSegment> segments;  // in target order
  std::vector<RelinkCall> calls;
};

/// Greedy cover: substrings longest first, ties by leftmost position; a
/// substring is taken when it is stored and none of its characters are
/// covered yet. Returns segments in target order, without fallbacks.
inline std::vector<CoverSegment> cover_target(const DsdDatabase& db, const std::u32string& target) {
  std::vector<bool> covered(target.size(), false);
  std::vector<CoverSegment> segs;
  for (std::size_t len = target.size(); len >= 1; --len) {
    for (std::size_t b = 0; b + len <= target.size(); ++b) {
      const std::u32string ss = target.substr(b, len);
      if (!db.contains(ss)) continue;
      if (std::any_of(covered.begin() + static_cast<std::ptrdiff_t>(b),
                      covered.begin() + static_cast<std::ptrdiff_t>(b + len), [](bool c) { return c; }))
        continue;
      segs.push_back(CoverSegment{b, ss, false, db.at(ss).wcts});
      std::fill(covered.begin() + static_cast<std::ptrdiff_t>(b), covered.begin() + static_cast<std::ptrdiff_t>(b + len),
                true);
    }
  }
  std::sort(segs.begin(), segs.end(), [](const auto& a, const auto& b) { return a.begin < b.begin; });
  return segs;
}

/// Conditioning sequence for `target`: one DSD per character.
inline std::vector<Vec> sample_wcts(DsdModel& model, const DsdDatabase& db, const std::string& target,
                                    SamplingTrace* trace = nullptr,
                                    const Alphabet& alphabet = Alphabet::default_alphabet()) {
  const std::u32string text = utf8_decode(target);
  if (text.empty()) throw InvariantError("sample_wcts: empty target");
  const std::size_t L = model.latent();
  if (db.mean_writer.size() != L) throw ShapeError("sample_wcts: database latent size mismatch");
  for (std::size_t i = 0; i < text.size(); ++i) alphabet.index_of(text[i], i);

  std::vector<CoverSegment> segs = cover_target(db, text);
  std::vector<bool> covered(text.size(), false);
  for (const auto& s : segs)
    for (std::size_t k = 0; k < s.key.size(); ++k) covered[s.begin + k] = true;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (covered[i]) continue;
    ad::Tape t;
    auto cs = model.char_dsd(t, {alphabet.index_of(text[i], i)});
    ad::Var w = ad::matmul(cs[0], t.constant(L, 1, db.mean_writer));
    segs.push_back(CoverSegment{i, text.substr(i, 1), true, {Vec(w.value().begin(), w.value().end())}});
  }
  std::sort(segs.begin(), segs.end(), [](const auto& a, const auto& b) { return a.begin < b.begin; });

  std::vector<Vec> result, refs;
  std::vector<std::string> ref_labels;
  for (const auto& seg : segs) {
    for (std::size_t j = 0; j < seg.wcts.size(); ++j) {
      std::vector<double> rows;
      for (const auto& r : refs) rows.insert(rows.end(), r.begin(), r.end());
      rows.insert(rows.end(), seg.wcts[j].begin(), seg.wcts[j].end());
      ad::Tape t;
      ad::Var out = model.reconstruct_beta(t, t.constant(refs.size() + 1, L, std::move(rows)));
      result.emplace_back(out.value().begin(), out.value().end());
      if (trace) {
        RelinkCall call{ref_labels};
        call.inputs.push_back(utf8_encode(seg.key.substr(0, j + 1)));
        trace->calls.push_back(std::move(call));
      }
    }
    refs.push_back(seg.wcts.back());
    ref_labels.push_back(utf8_encode(seg.key));
  }
  if (trace) trace->segments = segs;
  return result;
}

}  // namespace dsd
