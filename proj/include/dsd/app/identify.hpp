#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/core/tape.hpp"
#include "dsd/data/alphabet.hpp"
#include "dsd/data/stroke.hpp"
#include "dsd/model/dsd_model.hpp"

namespace dsd {

/// Enrolled writers and their mean writer DSDs.
struct Codebook {
  std::vector<std::string> writers;
  std::vector<std::vector<double>> w;

  std::size_t size() const noexcept { return writers.size(); }
};

/// w_bar over every character of every given sample of one writer.
inline std::vector<double> writer_dsd(DsdModel& model, const std::vector<StrokeSequence>& samples,
                                      const Alphabet& alphabet = Alphabet::default_alphabet()) {
  if (samples.empty()) throw InvariantError("writer_dsd: no samples");
  const std::size_t L = model.latent();
  std::vector<double> sum(L, 0.0);
  std::size_t n = 0;
  for (const auto& s : samples) {
    ad::Tape t;
    ad::Var w = model.encode_strokes(t, s);
    for (const auto& c : ad::writer_candidates(model.char_dsd(t, alphabet.indices(s.text)), w)) {
      for (std::size_t i = 0; i < L; ++i) sum[i] += c.value()[i];
      ++n;
    }
  }
  for (double& v : sum) v /= static_cast<double>(n);
  return sum;
}

inline std::vector<double> writer_dsd(DsdModel& model, const StrokeSequence& sample,
                                      const Alphabet& alphabet = Alphabet::default_alphabet()) {
  return writer_dsd(model, std::vector<StrokeSequence>{sample}, alphabet);
}

/// One entry per writer id, in order of first appearance.
inline Codebook build_codebook(DsdModel& model, const std::vector<StrokeSequence>& samples,
                               const Alphabet& alphabet = Alphabet::default_alphabet()) {
  Codebook cb;
  std::vector<std::vector<StrokeSequence>> groups;
  for (const auto& s : samples) {
    auto it = std::find(cb.writers.begin(), cb.writers.end(), s.writer_id);
    if (it == cb.writers.end()) {
      cb.writers.push_back(s.writer_id);
      groups.emplace_back();
      groups.back().push_back(s);
    } else {
      groups[static_cast<std::size_t>(it - cb.writers.begin())].push_back(s);
    }
  }
  for (const auto& g : groups) cb.w.push_back(writer_dsd(model, g, alphabet));
  return cb;
}

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("squared_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// argmin_j ||w - w_j||^2; ties go to the lowest index.
inline std::size_t nearest_writer(const Codebook& cb, const std::vector<double>& w) {
  if (cb.size() == 0) throw InvariantError("codebook is empty");
  std::size_t best = 0;
  double bd = squared_distance(w, cb.w[0]);
  for (std::size_t j = 1; j < cb.size(); ++j) {
    const double d = squared_distance(w, cb.w[j]);
    if (d < bd) {
      bd = d;
      best = j;
    }
  }
  return best;
}

/// Per-word predictions averaged as one-hot votes; argmax with ties to the
/// lowest index.
inline std::size_t predict_writer(const Codebook& cb, const std::vector<std::vector<double>>& word_dsds) {
  if (word_dsds.empty()) throw InvariantError("predict_writer: no query words");
  std::vector<double> votes(cb.size(), 0.0);
  for (const auto& w : word_dsds) votes[nearest_writer(cb, w)] += 1.0 / static_cast<double>(word_dsds.size());
  return static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

struct QueryGroup {
  std::string label;                           // true writer id
  std::vector<std::vector<double>> word_dsds;  // w_bar of each query word
};

struct IdentifyResult {
  std::vector<std::size_t> predictions;
  double accuracy = 0.0;
};

inline IdentifyResult identify_writers(const Codebook& cb, const std::vector<QueryGroup>& queries) {
  if (queries.empty()) throw InvariantError("identify_writers: no queries");
  IdentifyResult r;
  std::size_t hits = 0;
  for (const auto& q : queries) {
    const std::size_t p = predict_writer(cb, q.word_dsds);
    r.predictions.push_back(p);
    hits += cb.writers[p] == q.label ? 1 : 0;
  }
  r.accuracy = static_cast<double>(hits) / static_cast<double>(queries.size());
  return r;
}

}  // namespace dsd
