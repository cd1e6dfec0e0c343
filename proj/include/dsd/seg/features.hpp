#pragma once

// 23 per-point features for the segmentation network. Canvas y grows down.
//
//  0 dx / s          1 dy / s          2 |d| / s            (s = mean step length)
//  3 cos(theta)      4 sin(theta)      writing direction
//  5 sin(dtheta)     6 1 - cos(dtheta) curvature; zero on straight lines
//  7 pen-up          point starts a stroke
//  8 eos
//  9 (y - median y) / h                10 (y - min y) / h   (h = sample height)
// 11 x in stroke bbox                  12 y in stroke bbox  (0..1)
// 13 vicinity aspect (wy - wx)/(wy + wx) over points t-2..t+2
// 14 vicinity slope cos                15 vicinity slope sin (first to last point)
// 16 vicinity curliness: path length / bbox diagonal - 1
// 17 vicinity linearity: mean squared distance to the chord, / s^2
// 18 ascender band (y above median by 0.35 h)
// 19 descender band (y below median by 0.35 h)
// 20 t / (N - 1)
// 21 (x - min x) / w
// 22 path length since stroke start / (10 s)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/core/tensor.hpp"
#include "dsd/data/stroke.hpp"

namespace dsd {

inline constexpr std::size_t kNumSegFeatures = 23;

inline Tensor extract_features(const StrokeSequence& x) {
  const std::size_t n = x.size();
  if (n < 2) throw InvariantError("extract_features: need at least 2 points");
  std::vector<Point2> p(n);
  {
    Point2 pos{};
    for (std::size_t t = 0; t < n; ++t) {
      pos.x += x.points[t].dx;
      pos.y += x.points[t].dy;
      p[t] = pos;
    }
  }
  double s = 0.0;
  for (const auto& q : x.points) s += std::hypot(q.dx, q.dy);
  s /= static_cast<double>(n);
  if (!(s > 0.0)) s = 1.0;

  double xmin = p[0].x, xmax = p[0].x, ymin = p[0].y, ymax = p[0].y;
  for (const auto& q : p) {
    xmin = std::min(xmin, q.x);
    xmax = std::max(xmax, q.x);
    ymin = std::min(ymin, q.y);
    ymax = std::max(ymax, q.y);
  }
  const double w = std::max(xmax - xmin, 1e-9);
  const double h = std::max(ymax - ymin, 1e-9);
  std::vector<double> ys(n);
  for (std::size_t t = 0; t < n; ++t) ys[t] = p[t].y;
  std::nth_element(ys.begin(), ys.begin() + static_cast<std::ptrdiff_t>(n / 2), ys.end());
  const double ymed = ys[n / 2];

  // Stroke membership: a new stroke starts after every eos.
  std::vector<std::size_t> stroke_start(n), stroke_end(n);
  for (std::size_t t = 0, b = 0; t < n; ++t) {
    if (x.points[t].eos || t + 1 == n) {
      for (std::size_t k = b; k <= t; ++k) {
        stroke_start[k] = b;
        stroke_end[k] = t;
      }
      b = t + 1;
    }
  }

  Tensor f({n, kNumSegFeatures}, 0.0);
  double theta_prev = 0.0, arc = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto& q = x.points[t];
    const double len = std::hypot(q.dx, q.dy);
    const double theta = len > 0.0 ? std::atan2(q.dy, q.dx) : theta_prev;
    const double dtheta = t == 0 ? 0.0 : theta - theta_prev;
    const bool pen_up = t == 0 || x.points[t - 1].eos;
    if (pen_up) arc = 0.0;
    else arc += len;

    f(t, 0) = q.dx / s;
    f(t, 1) = q.dy / s;
    f(t, 2) = len / s;
    f(t, 3) = std::cos(theta);
    f(t, 4) = std::sin(theta);
    f(t, 5) = std::sin(dtheta);
    f(t, 6) = 1.0 - std::cos(dtheta);
    f(t, 7) = pen_up ? 1.0 : 0.0;
    f(t, 8) = q.eos ? 1.0 : 0.0;
    f(t, 9) = (p[t].y - ymed) / h;
    f(t, 10) = (p[t].y - ymin) / h;

    double sx0 = p[t].x, sx1 = p[t].x, sy0 = p[t].y, sy1 = p[t].y;
    for (std::size_t k = stroke_start[t]; k <= stroke_end[t]; ++k) {
      sx0 = std::min(sx0, p[k].x);
      sx1 = std::max(sx1, p[k].x);
      sy0 = std::min(sy0, p[k].y);
      sy1 = std::max(sy1, p[k].y);
    }
    f(t, 11) = sx1 > sx0 ? (p[t].x - sx0) / (sx1 - sx0) : 0.0;
    f(t, 12) = sy1 > sy0 ? (p[t].y - sy0) / (sy1 - sy0) : 0.0;

    const std::size_t a = t >= 2 ? t - 2 : 0;
    const std::size_t b = std::min(n - 1, t + 2);
    double wx0 = p[a].x, wx1 = p[a].x, wy0 = p[a].y, wy1 = p[a].y, path = 0.0;
    for (std::size_t k = a; k <= b; ++k) {
      wx0 = std::min(wx0, p[k].x);
      wx1 = std::max(wx1, p[k].x);
      wy0 = std::min(wy0, p[k].y);
      wy1 = std::max(wy1, p[k].y);
      if (k > a) path += std::hypot(p[k].x - p[k - 1].x, p[k].y - p[k - 1].y);
    }
    const double bw = wx1 - wx0, bh = wy1 - wy0;
    f(t, 13) = bw + bh > 0.0 ? (bh - bw) / (bh + bw) : 0.0;
    const double cx = p[b].x - p[a].x, cy = p[b].y - p[a].y;
    const double chord = std::hypot(cx, cy);
    f(t, 14) = chord > 0.0 ? cx / chord : 1.0;
    f(t, 15) = chord > 0.0 ? cy / chord : 0.0;
    const double diag = std::hypot(bw, bh);
    f(t, 16) = diag > 0.0 ? path / diag - 1.0 : 0.0;
    double lin = 0.0;
    for (std::size_t k = a; k <= b; ++k) {
      const double vx = p[k].x - p[a].x, vy = p[k].y - p[a].y;
      const double dist = chord > 0.0 ? (vx * cy - vy * cx) / chord : std::hypot(vx, vy);
      lin += dist * dist;
    }
    f(t, 17) = lin / static_cast<double>(b - a + 1) / (s * s);
    f(t, 18) = p[t].y < ymed - 0.35 * h ? 1.0 : 0.0;
    f(t, 19) = p[t].y > ymed + 0.35 * h ? 1.0 : 0.0;
    f(t, 20) = static_cast<double>(t) / static_cast<double>(n - 1);
    f(t, 21) = (p[t].x - xmin) / w;
    f(t, 22) = arc / (10.0 * s);
    theta_prev = theta;
  }
  return f;
}

}  // namespace dsd
