#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/data/utf8.hpp"

namespace dsd {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

/// Absolute pen trajectory: one polyline per pen-down segment.
using Strokes = std::vector<std::vector<Point2>>;

struct StrokePoint {
  double dx = 0.0;
  double dy = 0.0;
  std::uint8_t eos = 0;  // last point of a pen-down segment
  std::uint8_t eoc = 0;  // last point of a character; meaningful when has_eoc
  bool operator==(const StrokePoint&) const = default;
};

struct StrokeSequence {
  std::vector<StrokePoint> points;
  std::string writer_id;
  std::string text;
  bool has_eoc = false;

  std::size_t size() const noexcept { return points.size(); }
  bool operator==(const StrokeSequence&) const = default;
};

/// Throws InvariantError describing the first violated sequence invariant.
inline void validate(const StrokeSequence& s) {
  if (s.points.empty()) throw InvariantError("sequence has no points");
  std::size_t eoc_count = 0;
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    const auto& p = s.points[i];
    if (p.eos > 1) throw InvariantError("eos flag at point " + std::to_string(i) + " is not 0/1");
    if (s.has_eoc && p.eoc > 1)
      throw InvariantError("eoc flag at point " + std::to_string(i) + " is not 0/1");
    if (s.has_eoc) eoc_count += p.eoc;
  }
  if (s.has_eoc) {
    const std::size_t m = utf8_length(s.text);
    if (eoc_count != m)
      throw InvariantError("eoc count " + std::to_string(eoc_count) + " does not match text length " +
                           std::to_string(m));
  }
}

/// Indices of points flagged end-of-character, in order.
inline std::vector<std::size_t> eoc_indices(const StrokeSequence& s) {
  if (!s.has_eoc) throw InvariantError("sequence has no eoc labels");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < s.points.size(); ++i)
    if (s.points[i].eoc) idx.push_back(i);
  return idx;
}

/// Character index owning each point. Points after the last eoc map to the
/// last character.
inline std::vector<std::size_t> point_char_index(const StrokeSequence& s) {
  auto eoc = eoc_indices(s);
  if (eoc.empty()) throw InvariantError("sequence has no eoc points");
  std::vector<std::size_t> owner(s.points.size());
  std::size_t c = 0;
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    owner[i] = std::min(c, eoc.size() - 1);
    if (s.points[i].eoc) ++c;
  }
  return owner;
}

/// Sub-sequence covering characters [begin, end). The first kept delta is
/// still relative to the last point of the preceding character.
inline StrokeSequence crop_characters(const StrokeSequence& s, std::size_t begin, std::size_t end) {
  auto eoc = eoc_indices(s);
  if (begin >= end || end > eoc.size()) throw InvariantError("crop range out of bounds");
  const std::size_t first = begin == 0 ? 0 : eoc[begin - 1] + 1;
  const std::size_t last = eoc[end - 1];
  StrokeSequence out;
  out.writer_id = s.writer_id;
  out.has_eoc = true;
  out.points.assign(s.points.begin() + static_cast<std::ptrdiff_t>(first),
                    s.points.begin() + static_cast<std::ptrdiff_t>(last + 1));
  auto cps = utf8_decode(s.text);
  out.text = utf8_encode(std::u32string(cps.begin() + static_cast<std::ptrdiff_t>(begin),
                                        cps.begin() + static_cast<std::ptrdiff_t>(end)));
  return out;
}

/// Converts absolute strokes to deltas. Every point is emitted relative to its
/// predecessor, the first one relative to `origin`.
inline StrokeSequence delta_encode(const Strokes& strokes, Point2 origin) {
  StrokeSequence s;
  Point2 prev = origin;
  for (const auto& stroke : strokes) {
    for (std::size_t i = 0; i < stroke.size(); ++i) {
      StrokePoint p;
      p.dx = stroke[i].x - prev.x;
      p.dy = stroke[i].y - prev.y;
      p.eos = i + 1 == stroke.size() ? 1 : 0;
      s.points.push_back(p);
      prev = stroke[i];
    }
  }
  if (s.points.empty()) throw InvariantError("delta_encode: no points");
  return s;
}

/// Anchored form: the first point is the anchor and is not emitted, so N
/// absolute points become N-1 deltas.
inline StrokeSequence delta_encode(const Strokes& strokes) {
  std::size_t total = 0;
  for (const auto& st : strokes) total += st.size();
  if (total < 2) throw InvariantError("delta_encode: need at least 2 points");
  if (strokes.front().size() < 2)
    throw InvariantError("delta_encode: anchored first stroke needs at least 2 points");
  Strokes rest = strokes;
  const Point2 anchor = rest.front().front();
  rest.front().erase(rest.front().begin());
  return delta_encode(rest, anchor);
}

/// Prefix-sum reconstruction. With `include_origin` the origin is prepended to
/// the first stroke (inverse of the anchored encoding).
inline Strokes delta_decode(const StrokeSequence& s, Point2 origin = {}, bool include_origin = false) {
  Strokes out;
  std::vector<Point2> cur;
  if (include_origin) cur.push_back(origin);
  Point2 pos = origin;
  for (const auto& p : s.points) {
    pos.x += p.dx;
    pos.y += p.dy;
    cur.push_back(pos);
    if (p.eos) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Moves a stroke ahead of an earlier one when it lies entirely to its left
/// (its rightmost x is smaller than the other's leftmost x). Strokes with
/// overlapping x-extents keep their temporal order. Idempotent.
inline Strokes reorder_strokes_left_to_right(const Strokes& strokes) {
  struct Extent {
    double lo, hi;
  };
  auto extent = [](const std::vector<Point2>& st) {
    Extent e{st.front().x, st.front().x};
    for (const auto& p : st) {
      e.lo = std::min(e.lo, p.x);
      e.hi = std::max(e.hi, p.x);
    }
    return e;
  };
  std::vector<std::size_t> order;
  std::vector<Extent> ext;
  for (const auto& st : strokes) ext.push_back(extent(st));
  for (std::size_t i = 0; i < strokes.size(); ++i) {
    auto pos = std::find_if(order.begin(), order.end(),
                            [&](std::size_t j) { return ext[i].hi < ext[j].lo; });
    order.insert(pos, i);
  }
  Strokes out;
  for (auto i : order) out.push_back(strokes[i]);
  return out;
}

/// Delta-sequence form of the left-to-right reordering. Eoc labels are
/// dropped when the order changes, since they no longer describe the points.
inline StrokeSequence reorder_delayed_strokes(const StrokeSequence& s) {
  const Strokes strokes = delta_decode(s);
  const Strokes reordered = reorder_strokes_left_to_right(strokes);
  if (reordered == strokes) return s;
  StrokeSequence out = delta_encode(reordered, Point2{});
  out.writer_id = s.writer_id;
  out.text = s.text;
  out.has_eoc = false;
  return out;
}

}  // namespace dsd
