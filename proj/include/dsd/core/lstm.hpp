#pragma once

// Stacked LSTM layers: a fused tape op per layer (full BPTT inside one node)
// and a tape-free single-step path for autoregressive generation.
//
// Weights of a layer are stored as one (in + H) x 4H matrix acting on the row
// vector [x_t, h_{t-1}]; gate blocks are ordered input, forget, cell, output.

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/core/params.hpp"
#include "dsd/core/tape.hpp"

namespace dsd {

struct LstmLayerParams {
  Parameter* w = nullptr;  // (in + H) x 4H
  Parameter* b = nullptr;  // 1 x 4H
  std::size_t input_dim = 0;
};

struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  /// When set, every layer above the first also sees the original input.
  bool skip_input = false;
  std::vector<LstmLayerParams> layers;

  std::size_t num_layers() const noexcept { return layers.size(); }

  static LstmParams create(ParameterStore& store, const std::string& prefix,
                           std::size_t input_dim, std::size_t hidden_dim, std::size_t num_layers,
                           bool skip_input = false) {
    if (num_layers == 0 || hidden_dim == 0 || input_dim == 0)
      throw InvariantError("LSTM " + prefix + ": dimensions must be positive");
    LstmParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    p.skip_input = skip_input;
    for (std::size_t l = 0; l < num_layers; ++l) {
      const std::size_t in = l == 0 ? input_dim : hidden_dim + (skip_input ? input_dim : 0);
      LstmLayerParams layer;
      layer.input_dim = in;
      layer.w = &store.add(prefix + ".l" + std::to_string(l) + ".W", in + hidden_dim, 4 * hidden_dim);
      layer.b = &store.add(prefix + ".l" + std::to_string(l) + ".b", 1, 4 * hidden_dim);
      p.layers.push_back(layer);
    }
    return p;
  }

  /// Weights uniform by fan-in; biases stay zero.
  void init(std::mt19937_64& rng) const {
    for (const auto& l : layers) init_uniform_fan_in(*l.w, l.input_dim + hidden_dim, rng);
  }
};

namespace detail {

inline double sigm(double x) { return ad::sigmoid_scalar(x); }

// z = b + [x, h] W, accumulated row by row.
inline void lstm_gates(const double* w, const double* b, const double* x, std::size_t in,
                       const double* h, std::size_t hid, double* z) {
  const std::size_t g4 = 4 * hid;
  std::copy(b, b + g4, z);
  for (std::size_t j = 0; j < in; ++j) ad::detail::axpy(z, w + j * g4, x[j], g4);
  for (std::size_t j = 0; j < hid; ++j) ad::detail::axpy(z, w + (in + j) * g4, h[j], g4);
}

// Applies gate nonlinearities in place and advances (h, c).
inline void lstm_cell(double* z, std::size_t hid, const double* c_prev, double* c, double* h) {
  double* gi = z;
  double* gf = z + hid;
  double* gg = z + 2 * hid;
  double* go = z + 3 * hid;
  for (std::size_t k = 0; k < hid; ++k) {
    gi[k] = sigm(gi[k]);
    gf[k] = sigm(gf[k]);
    gg[k] = std::tanh(gg[k]);
    go[k] = sigm(go[k]);
    c[k] = gf[k] * c_prev[k] + gi[k] * gg[k];
    h[k] = go[k] * std::tanh(c[k]);
  }
}

}  // namespace detail

namespace ad {

/// One LSTM layer over a T x in sequence; returns T x H hidden states.
/// Optional h0 / c0 are 1 x H and participate in differentiation.
inline Var lstm_layer(Var x, Var w, Var b, std::optional<Var> h0 = std::nullopt,
                      std::optional<Var> c0 = std::nullopt) {
  Tape& t = x.tape();
  const std::size_t T = x.rows(), in = x.cols();
  const std::size_t g4 = b.cols();
  const std::size_t hid = g4 / 4;
  if (b.rows() != 1 || g4 % 4 != 0 || w.rows() != in + hid || w.cols() != g4)
    throw ShapeError("lstm_layer: weights " + detail::shape_str(w) + " / bias " +
                     detail::shape_str(b) + " do not fit input " + detail::shape_str(x));
  if (h0 && (h0->rows() != 1 || h0->cols() != hid)) throw ShapeError("lstm_layer: bad h0 shape");
  if (c0 && (c0->rows() != 1 || c0->cols() != hid)) throw ShapeError("lstm_layer: bad c0 shape");

  // Saved per step: activated gates (4H), cell state (H).
  std::vector<double> gates(T * g4);
  std::vector<double> cells(T * hid);
  std::vector<double> out(T * hid);
  std::vector<double> hinit(hid, 0.0), cinit(hid, 0.0);
  if (h0) std::copy(h0->value().begin(), h0->value().end(), hinit.begin());
  if (c0) std::copy(c0->value().begin(), c0->value().end(), cinit.begin());

  const double* xv = x.value().data();
  const double* wv = w.value().data();
  const double* bv = b.value().data();
  for (std::size_t s = 0; s < T; ++s) {
    const double* hp = s == 0 ? hinit.data() : out.data() + (s - 1) * hid;
    const double* cp = s == 0 ? cinit.data() : cells.data() + (s - 1) * hid;
    double* z = gates.data() + s * g4;
    dsd::detail::lstm_gates(wv, bv, xv + s * in, in, hp, hid, z);
    dsd::detail::lstm_cell(z, hid, cp, cells.data() + s * hid, out.data() + s * hid);
  }

  const auto ix = x.id(), iw = w.id(), ib = b.id();
  const auto ih0 = h0 ? std::optional<std::uint32_t>(h0->id()) : std::nullopt;
  const auto ic0 = c0 ? std::optional<std::uint32_t>(c0->id()) : std::nullopt;
  bool ng = t.needs_grad(ix) || t.needs_grad(iw) || t.needs_grad(ib) ||
            (ih0 && t.needs_grad(*ih0)) || (ic0 && t.needs_grad(*ic0));

  return t.push(
      T, hid, std::move(out), ng,
      [=, gates = std::move(gates), cells = std::move(cells), hinit = std::move(hinit),
       cinit = std::move(cinit)](Tape& tp, std::uint32_t self) {
        const double* gout = tp.grad_ptr(self);
        const double* hs = tp.value_ptr(self);
        const double* xv = tp.value_ptr(ix);
        const double* wv = tp.value_ptr(iw);
        double* gx = tp.grad_ptr(ix);
        double* gw = tp.grad_ptr(iw);
        double* gb = tp.grad_ptr(ib);
        const std::size_t rows = in + hid;
        // W^T so that d[x,h] = sum_g dz_g * WT[g,:] vectorizes.
        std::vector<double> wt(g4 * rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t g = 0; g < g4; ++g) wt[g * rows + r] = wv[r * g4 + g];
        std::vector<double> dh_next(hid, 0.0), dc_next(hid, 0.0), dz(g4), dv(rows);
        for (std::size_t s = T; s-- > 0;) {
          const double* z = gates.data() + s * g4;
          const double* gi = z;
          const double* gf = z + hid;
          const double* gg = z + 2 * hid;
          const double* go = z + 3 * hid;
          const double* c = cells.data() + s * hid;
          const double* cp = s == 0 ? cinit.data() : cells.data() + (s - 1) * hid;
          const double* hp = s == 0 ? hinit.data() : hs + (s - 1) * hid;
          for (std::size_t k = 0; k < hid; ++k) {
            const double dh = gout[s * hid + k] + dh_next[k];
            const double tc = std::tanh(c[k]);
            const double dc = dh * go[k] * (1.0 - tc * tc) + dc_next[k];
            dz[k] = dc * gg[k] * gi[k] * (1.0 - gi[k]);
            dz[hid + k] = dc * cp[k] * gf[k] * (1.0 - gf[k]);
            dz[2 * hid + k] = dc * gi[k] * (1.0 - gg[k] * gg[k]);
            dz[3 * hid + k] = dh * tc * go[k] * (1.0 - go[k]);
            dc_next[k] = dc * gf[k];
          }
          if (gb) detail::axpy(gb, dz.data(), 1.0, g4);
          if (gw) {
            const double* xs = xv + s * in;
            for (std::size_t j = 0; j < in; ++j)
              if (xs[j] != 0.0) detail::axpy(gw + j * g4, dz.data(), xs[j], g4);
            for (std::size_t j = 0; j < hid; ++j)
              if (hp[j] != 0.0) detail::axpy(gw + (in + j) * g4, dz.data(), hp[j], g4);
          }
          std::fill(dv.begin(), dv.end(), 0.0);
          for (std::size_t g = 0; g < g4; ++g)
            if (dz[g] != 0.0) detail::axpy(dv.data(), wt.data() + g * rows, dz[g], rows);
          if (gx) detail::axpy(gx + s * in, dv.data(), 1.0, in);
          std::copy(dv.begin() + static_cast<std::ptrdiff_t>(in), dv.end(), dh_next.begin());
        }
        if (ih0)
          if (double* g = tp.grad_ptr(*ih0)) detail::axpy(g, dh_next.data(), 1.0, hid);
        if (ic0)
          if (double* g = tp.grad_ptr(*ic0)) detail::axpy(g, dc_next.data(), 1.0, hid);
      });
}

/// Runs every layer of a stack over a T x input_dim sequence from zero state.
/// Returns the top layer's T x H hidden states.
inline Var lstm_forward(Var x, const LstmParams& p) {
  if (x.cols() != p.input_dim)
    throw ShapeError("lstm_forward: input has " + std::to_string(x.cols()) +
                     " features, params expect " + std::to_string(p.input_dim));
  Tape& t = x.tape();
  Var h = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    Var in = (l > 0 && p.skip_input) ? concat_cols({h, x}) : h;
    h = lstm_layer(in, t.param(*p.layers[l].w), t.param(*p.layers[l].b));
  }
  return h;
}

/// Single-layer variant with explicit initial state.
inline Var lstm_forward(Var x, const LstmParams& p, Var h0, Var c0) {
  if (p.layers.size() != 1) throw InvariantError("explicit initial state supports one layer");
  Tape& t = x.tape();
  return lstm_layer(x, t.param(*p.layers[0].w), t.param(*p.layers[0].b), h0, c0);
}

}  // namespace ad

/// Recurrent state of a stack for step-by-step inference.
struct LstmState {
  std::vector<std::vector<double>> h;
  std::vector<std::vector<double>> c;

  static LstmState zeros(const LstmParams& p) {
    LstmState s;
    s.h.assign(p.num_layers(), std::vector<double>(p.hidden_dim, 0.0));
    s.c.assign(p.num_layers(), std::vector<double>(p.hidden_dim, 0.0));
    return s;
  }
};

/// Advances the stack by one input row; returns the top hidden state.
inline const std::vector<double>& lstm_step(const LstmParams& p, LstmState& state,
                                            std::span<const double> x) {
  if (x.size() != p.input_dim) throw ShapeError("lstm_step: input width mismatch");
  const std::size_t hid = p.hidden_dim;
  std::vector<double> z(4 * hid), cnew(hid), hnew(hid), in;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    if (l == 0) {
      in.assign(x.begin(), x.end());
    } else {
      in = state.h[l - 1];
      if (p.skip_input) in.insert(in.end(), x.begin(), x.end());
    }
    detail::lstm_gates(p.layers[l].w->value.data(), p.layers[l].b->value.data(), in.data(),
                       in.size(), state.h[l].data(), hid, z.data());
    detail::lstm_cell(z.data(), hid, state.c[l].data(), cnew.data(), hnew.data());
    state.c[l] = cnew;
    state.h[l] = hnew;
  }
  return state.h.back();
}

}  // namespace dsd
