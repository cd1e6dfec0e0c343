#pragma once

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

namespace dsd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvariantError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

/// Raised by LU factorization when a pivot falls below the relative threshold.
/// `index()` identifies which matrix of a batch failed, when known.
class SingularMatrixError : public Error {
 public:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  explicit SingularMatrixError(const std::string& what, std::size_t index = npos)
      : Error(what), index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class UnknownCharacterError : public Error {
 public:
  UnknownCharacterError(char32_t codepoint, std::size_t position)
      : Error("unknown character U+" + hex(codepoint) + " at position " +
              std::to_string(position)),
        codepoint_(codepoint),
        position_(position) {}

  char32_t codepoint() const noexcept { return codepoint_; }
  std::size_t position() const noexcept { return position_; }

 private:
  static std::string hex(char32_t cp) {
    static constexpr char digits[] = "0123456789ABCDEF";
    std::string out;
    for (int shift = 12; shift >= 0; shift -= 4) out += digits[(cp >> shift) & 0xF];
    if (cp > 0xFFFF) out = std::string(1, digits[(cp >> 16) & 0xF]) + out;
    return out;
  }

  char32_t codepoint_;
  std::size_t position_;
};

}  // namespace dsd
