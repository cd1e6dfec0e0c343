#pragma once

// Newline-delimited JSON records, one sample per line:
//   {"writer_id": "...", "text": "...", "points": [[dx, dy, eos], ...], "eoc": [0, 1, ...]}
// "eoc" is optional.

#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsd/core/error.hpp"
#include "dsd/data/stroke.hpp"

namespace dsd {

inline nlohmann::json to_json(const StrokeSequence& s) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : s.points) pts.push_back({p.dx, p.dy, static_cast<int>(p.eos)});
  nlohmann::json j;
  j["writer_id"] = s.writer_id;
  j["text"] = s.text;
  j["points"] = std::move(pts);
  if (s.has_eoc) {
    nlohmann::json eoc = nlohmann::json::array();
    for (const auto& p : s.points) eoc.push_back(static_cast<int>(p.eoc));
    j["eoc"] = std::move(eoc);
  }
  return j;
}

namespace detail {

inline std::uint8_t read_flag(const nlohmann::json& v, const char* what) {
  if (!v.is_number()) throw ParseError(std::string(what) + " is not a number");
  const double d = v.get<double>();
  if (d != 0.0 && d != 1.0) throw InvariantError(std::string(what) + " must be 0 or 1");
  return d == 1.0 ? 1 : 0;
}

}  // namespace detail

/// Parses and validates one record.
inline StrokeSequence from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("record is not an object");
  StrokeSequence s;
  if (!j.contains("writer_id") || !j["writer_id"].is_string()) throw ParseError("missing writer_id");
  if (!j.contains("text") || !j["text"].is_string()) throw ParseError("missing text");
  if (!j.contains("points") || !j["points"].is_array()) throw ParseError("missing points");
  s.writer_id = j["writer_id"].get<std::string>();
  s.text = j["text"].get<std::string>();
  for (const auto& p : j["points"]) {
    if (!p.is_array() || p.size() != 3) throw ParseError("point is not a [dx, dy, eos] triple");
    if (!p[0].is_number() || !p[1].is_number()) throw ParseError("point coordinate is not a number");
    StrokePoint sp;
    sp.dx = p[0].get<double>();
    sp.dy = p[1].get<double>();
    sp.eos = detail::read_flag(p[2], "eos");
    s.points.push_back(sp);
  }
  if (j.contains("eoc") && !j["eoc"].is_null()) {
    const auto& e = j["eoc"];
    if (!e.is_array()) throw ParseError("eoc is not an array");
    if (e.size() != s.points.size())
      throw InvariantError("eoc has " + std::to_string(e.size()) + " entries for " +
                           std::to_string(s.points.size()) + " points");
    for (std::size_t i = 0; i < e.size(); ++i) s.points[i].eoc = detail::read_flag(e[i], "eoc");
    s.has_eoc = true;
  }
  validate(s);
  return s;
}

struct LoadOptions {
  bool fail_fast = false;
};

struct LoadResult {
  std::vector<StrokeSequence> samples;
  /// "line N: reason" for each rejected record.
  std::vector<std::string> diagnostics;
  std::vector<std::string> warnings;
};

inline LoadResult load_dataset(std::istream& in, const LoadOptions& opt = {}) {
  LoadResult r;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      r.samples.push_back(from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      std::string msg = "line " + std::to_string(lineno) + ": " + e.what();
      if (opt.fail_fast) throw ParseError(msg);
      r.diagnostics.push_back(std::move(msg));
    }
  }
  if (r.samples.empty() && r.diagnostics.empty()) r.warnings.push_back("dataset is empty");
  return r;
}

inline LoadResult load_dataset(const std::filesystem::path& path, const LoadOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return load_dataset(in, opt);
}

inline void write_dataset(std::ostream& out, const std::vector<StrokeSequence>& samples) {
  for (const auto& s : samples) out << to_json(s).dump() << '\n';
}

inline void write_dataset(const std::filesystem::path& path, const std::vector<StrokeSequence>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_dataset(out, samples);
}

}  // namespace dsd
