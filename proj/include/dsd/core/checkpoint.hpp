#pragma once

// Checkpoint layout: a directory holding
//   manifest.txt  one "key value..." record per line:
//                   version 1
//                   meta <key> <value>
//                   param <name> <rows> <cols>
//   params.bin    float64 little-endian arrays, concatenated in manifest order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/core/params.hpp"

namespace dsd {

inline constexpr int kCheckpointVersion = 1;

using CheckpointMeta = std::map<std::string, std::string>;

namespace detail {

inline std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
  return r;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const ParameterStore& store,
                            const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream m(dir / "manifest.txt", std::ios::binary);
    if (!m) throw Error("cannot write " + (dir / "manifest.txt").string());
    m << "version " << kCheckpointVersion << '\n';
    for (const auto& [k, v] : meta) m << "meta " << k << ' ' << v << '\n';
    for (const auto& p : store) m << "param " << p->name << ' ' << p->rows << ' ' << p->cols << '\n';
  }
  std::ofstream b(dir / "params.bin", std::ios::binary);
  if (!b) throw Error("cannot write " + (dir / "params.bin").string());
  for (const auto& p : store) {
    for (double v : p->value) {
      std::uint64_t bits = detail::to_le(std::bit_cast<std::uint64_t>(v));
      b.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
}

/// Reads only the manifest's meta records.
inline CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.txt");
  if (!m) throw Error("cannot read " + (dir / "manifest.txt").string());
  CheckpointMeta meta;
  std::string line;
  bool versioned = false;
  while (std::getline(m, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "version") {
      int v = 0;
      ls >> v;
      if (v != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(v));
      versioned = true;
    } else if (kind == "meta") {
      std::string k, v;
      ls >> k;
      std::getline(ls >> std::ws, v);
      meta[k] = v;
    }
  }
  if (!versioned) throw ParseError("checkpoint manifest has no version record");
  return meta;
}

/// Loads parameter values into `store`, which must already hold the same
/// parameters (names, shapes, order) as the manifest.
inline CheckpointMeta load_checkpoint(const std::filesystem::path& dir, ParameterStore& store) {
  CheckpointMeta meta = read_checkpoint_meta(dir);
  std::ifstream m(dir / "manifest.txt");
  std::string line;
  std::size_t idx = 0;
  while (std::getline(m, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind != "param") continue;
    std::string name;
    std::size_t rows = 0, cols = 0;
    ls >> name >> rows >> cols;
    if (idx >= store.count()) throw ParseError("checkpoint has extra parameter " + name);
    const Parameter& p = store[idx];
    if (p.name != name || p.rows != rows || p.cols != cols)
      throw ParseError("checkpoint parameter " + name + " does not match model parameter " + p.name);
    ++idx;
  }
  if (idx != store.count()) throw ParseError("checkpoint is missing parameters");

  std::ifstream b(dir / "params.bin", std::ios::binary);
  if (!b) throw Error("cannot read " + (dir / "params.bin").string());
  for (auto& p : store) {
    for (double& v : p->value) {
      std::uint64_t bits = 0;
      if (!b.read(reinterpret_cast<char*>(&bits), sizeof bits))
        throw ParseError("params.bin is truncated at " + p->name);
      v = std::bit_cast<double>(detail::to_le(bits));
    }
  }
  if (b.peek() != std::char_traits<char>::eof()) throw ParseError("params.bin has trailing data");
  return meta;
}

}  // namespace dsd
