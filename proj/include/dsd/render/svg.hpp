#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/data/stroke.hpp"

namespace dsd {

/// Canvas matches the collection box: 750 x 120 with the baseline at y = 80.
/// Samples are drawn with their origin at (margin_x, baseline).
struct RenderSpec {
  double width = 750.0;
  double height = 120.0;
  double baseline = 80.0;
  double margin_x = 10.0;
  double stroke_width = 2.0;
  bool color_by_char = false;
  bool baseline_guide = false;

  void check() const {
    if (!(width > 0.0) || !(height > 0.0)) throw InvariantError("RenderSpec: dimensions must be positive");
    if (!(baseline >= 0.0 && baseline <= height)) throw InvariantError("RenderSpec: baseline outside canvas");
    if (!(stroke_width > 0.0)) throw InvariantError("RenderSpec: stroke width must be positive");
  }

  Point2 origin() const { return {margin_x, baseline}; }
};

inline constexpr std::array<std::string_view, 8> kCharPalette = {
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

/// Shortest decimal that parses back to the same double.
inline std::string format_number(double v) {
  if (v == 0.0) v = 0.0;  // drop the sign of -0
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace detail {

struct Polyline {
  std::vector<Point2> points;
  std::size_t char_index = 0;
};

/// Pen-down segments, further split at character boundaries when `by_char`.
/// A character piece that continues a stroke starts at the previous piece's
/// last point so the ink stays connected.
inline std::vector<Polyline> polylines(const StrokeSequence& s, Point2 origin, bool by_char) {
  std::vector<Polyline> out;
  Polyline cur;
  Point2 pos = origin;
  std::size_t ch = 0;
  for (const auto& p : s.points) {
    pos.x += p.dx;
    pos.y += p.dy;
    cur.points.push_back(pos);
    const bool char_end = by_char && p.eoc;
    if (p.eos || char_end) {
      cur.char_index = ch;
      out.push_back(std::move(cur));
      cur = Polyline{};
      if (!p.eos) cur.points.push_back(pos);
    }
    if (char_end) ++ch;
  }
  if (!cur.points.empty()) {
    cur.char_index = ch;
    out.push_back(std::move(cur));
  }
  return out;
}

inline std::string path_data(const std::vector<Point2>& pts) {
  std::string d = "M" + format_number(pts[0].x) + " " + format_number(pts[0].y);
  if (pts.size() == 1) return d + " L" + format_number(pts[0].x) + " " + format_number(pts[0].y);
  for (std::size_t i = 1; i < pts.size(); ++i) d += " L" + format_number(pts[i].x) + " " + format_number(pts[i].y);
  return d;
}

inline void append_paths(std::string& svg, const StrokeSequence& s, const RenderSpec& spec, Point2 origin) {
  const bool by_char = spec.color_by_char && s.has_eoc;
  if (spec.baseline_guide) {
    const double x0 = origin.x - spec.margin_x;
    svg += "<path d=\"M" + format_number(x0) + " " + format_number(origin.y) + " L" +
           format_number(x0 + spec.width) + " " +
           format_number(origin.y) + "\" stroke=\"#cccccc\" stroke-width=\"1\" fill=\"none\"/>\n";
  }
  for (const auto& pl : polylines(s, origin, by_char)) {
    const std::string_view color = by_char ? kCharPalette[pl.char_index % kCharPalette.size()] : "#000000";
    svg += "<path d=\"" + path_data(pl.points) + "\" stroke=\"";
    svg += color;
    svg += "\" stroke-width=\"" + format_number(spec.stroke_width) +
           "\" stroke-linecap=\"round\" stroke-linejoin=\"round\" fill=\"none\"/>\n";
  }
}

inline std::string svg_open(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + format_number(w) + "\" height=\"" +
         format_number(h) + "\" viewBox=\"0 0 " + format_number(w) + " " + format_number(h) + "\">\n";
}

}  // namespace detail

/// One path per pen-down segment (per character piece when coloring). A
/// segment of a single point is drawn as a zero-length path, which the round
/// line cap renders as a dot.
inline std::string render_svg(const StrokeSequence& s, const RenderSpec& spec = {}) {
  spec.check();
  std::string svg = detail::svg_open(spec.width, spec.height);
  if (!s.points.empty()) detail::append_paths(svg, s, spec, spec.origin());
  svg += "</svg>\n";
  return svg;
}

/// Row-major grid of cells, each `spec.width` x `spec.height`.
inline std::string render_svg_grid(const std::vector<StrokeSequence>& cells, std::size_t columns,
                                   const RenderSpec& spec = {}) {
  spec.check();
  if (columns == 0) throw InvariantError("render_svg_grid: columns must be positive");
  const std::size_t rows = (cells.size() + columns - 1) / columns;
  std::string svg = detail::svg_open(spec.width * static_cast<double>(columns),
                                     spec.height * static_cast<double>(std::max<std::size_t>(rows, 1)));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].points.empty()) continue;
    const Point2 o{spec.margin_x + spec.width * static_cast<double>(i % columns),
                   spec.baseline + spec.height * static_cast<double>(i / columns)};
    detail::append_paths(svg, cells[i], spec, o);
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace dsd
