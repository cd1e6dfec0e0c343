#pragma once

// Segmentation network: stacked bidirectional LSTM over per-point features
// with a per-point softmax over characters plus blank, trained only from the
// text label through the lattice loss.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dsd/core/adam.hpp"
#include "dsd/core/error.hpp"
#include "dsd/core/lstm.hpp"
#include "dsd/core/params.hpp"
#include "dsd/core/tape.hpp"
#include "dsd/data/alphabet.hpp"
#include "dsd/data/stroke.hpp"
#include "dsd/seg/ctc.hpp"
#include "dsd/seg/features.hpp"

namespace dsd {

struct SegNetConfig {
  std::size_t hidden = 128;  // per direction
  std::size_t layers = 3;
  std::size_t num_classes = 87;  // characters + blank
  std::size_t blank = 86;
  bool blank_between_distinct = true;
};

class SegNet {
 public:
  SegNet(const SegNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    std::size_t in = kNumSegFeatures;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      fwd_.push_back(LstmParams::create(store_, "seg.fwd" + std::to_string(l), in, cfg.hidden, 1));
      bwd_.push_back(LstmParams::create(store_, "seg.bwd" + std::to_string(l), in, cfg.hidden, 1));
      in = 2 * cfg.hidden;
    }
    head_w_ = &store_.add("seg.head.W", in, cfg.num_classes);
    head_b_ = &store_.add("seg.head.b", 1, cfg.num_classes);
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      fwd_[l].init(rng);
      bwd_[l].init(rng);
    }
    init_uniform_fan_in(*head_w_, in, rng);
  }

  const SegNetConfig& config() const noexcept { return cfg_; }
  ParameterStore& params() noexcept { return store_; }
  const ParameterStore& params() const noexcept { return store_; }
  CtcOptions ctc_options() const { return CtcOptions{cfg_.blank, cfg_.blank_between_distinct}; }

  /// N x num_classes logits for an N x 23 feature matrix.
  ad::Var logits(ad::Tape& t, ad::Var features) {
    ad::Var h = features;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      ad::Var f = ad::lstm_forward(h, fwd_[l]);
      ad::Var b = ad::reverse_rows(ad::lstm_forward(ad::reverse_rows(h), bwd_[l]));
      h = ad::concat_cols({f, b});
    }
    return ad::affine(h, t.param(*head_w_), t.param(*head_b_));
  }

  Tensor logits(const StrokeSequence& x) {
    ad::Tape t;
    return logits(t, t.constant(extract_features(x))).tensor();
  }

  ad::Var loss(ad::Tape& t, const StrokeSequence& x, const std::vector<std::size_t>& label) {
    return ad::seg_ctc_loss(logits(t, t.constant(extract_features(x))), label, ctc_options());
  }

 private:
  SegNetConfig cfg_;
  ParameterStore store_;
  std::vector<LstmParams> fwd_, bwd_;
  Parameter* head_w_ = nullptr;
  Parameter* head_b_ = nullptr;
};

struct SegTrainConfig {
  std::size_t steps = 500;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  AdamConfig adam;
};

/// Mean lattice loss per step. Samples too short for their label are skipped.
inline std::vector<double> train_segmenter(SegNet& net, const std::vector<StrokeSequence>& samples,
                                           const Alphabet& alphabet, const SegTrainConfig& cfg,
                                           const std::function<void(std::size_t, double)>& on_step = {}) {
  std::vector<std::size_t> usable;
  std::vector<std::vector<std::size_t>> labels(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    labels[i] = alphabet.indices(samples[i].text);
    if (samples[i].size() >= 2 &&
        samples[i].size() >= SegLattice::build(labels[i], net.ctc_options()).min_frames())
      usable.push_back(i);
  }
  if (usable.empty()) throw InvariantError("train_segmenter: no usable samples");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
  OptimizerState opt(cfg.adam);
  std::vector<double> trace;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    net.params().zero_grad();
    double total = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const std::size_t i = usable[pick(rng)];
      ad::Tape t;
      ad::Var l = net.loss(t, samples[i], labels[i]);
      total += l.item();
      t.backward(l);
    }
    const double mean = total / static_cast<double>(cfg.batch);
    if (!std::isfinite(mean)) throw Error("segmenter loss is not finite at step " + std::to_string(step));
    opt.step(net.params());
    trace.push_back(mean);
    if (on_step) on_step(step, mean);
  }
  return trace;
}

/// Fills eoc labels from the best lattice path.
inline StrokeSequence segment(SegNet& net, const StrokeSequence& x, const Alphabet& alphabet) {
  const auto label = alphabet.indices(x.text);
  const Alignment a = decode_alignment(net.logits(x), label, net.ctc_options());
  StrokeSequence out = x;
  out.has_eoc = true;
  for (std::size_t t = 0; t < out.size(); ++t) out.points[t].eoc = a.eoc[t];
  return out;
}

}  // namespace dsd
