#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/core/tensor.hpp"
#include "dsd/data/utf8.hpp"

namespace dsd {

class Alphabet {
 public:
  /// Characters in index order; the blank token takes the next index.
  explicit Alphabet(std::u32string chars) : chars_(std::move(chars)) {
    for (std::size_t i = 0; i < chars_.size(); ++i) {
      if (!index_.emplace(chars_[i], i).second)
        throw InvariantError("alphabet lists a character twice");
    }
  }

  /// Space, digits, lower case, upper case, then punctuation. The listed set
  /// has 85 entries; '%' completes the 86.
  static const Alphabet& default_alphabet() {
    static const Alphabet a(utf8_decode(
        " 0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ!?\"'*+-=:;,.<>\\/[]()#$%"));
    return a;
  }

  std::size_t num_chars() const noexcept { return chars_.size(); }
  /// One-hot width: characters plus blank.
  std::size_t size() const noexcept { return chars_.size() + 1; }
  std::size_t blank() const noexcept { return chars_.size(); }

  char32_t at(std::size_t i) const {
    if (i >= chars_.size()) throw InvariantError("alphabet index out of range");
    return chars_[i];
  }
  bool contains(char32_t c) const { return index_.contains(c); }
  std::size_t index_of(char32_t c, std::size_t position = 0) const {
    auto it = index_.find(c);
    if (it == index_.end()) throw UnknownCharacterError(c, position);
    return it->second;
  }

  /// Character indices of a UTF-8 string.
  std::vector<std::size_t> indices(std::string_view text) const {
    std::vector<std::size_t> out;
    const auto cps = utf8_decode(text);
    for (std::size_t i = 0; i < cps.size(); ++i) out.push_back(index_of(cps[i], i));
    return out;
  }

  std::string decode(const std::vector<std::size_t>& idx) const {
    std::u32string s;
    for (auto i : idx) s.push_back(at(i));
    return utf8_encode(s);
  }

  const std::u32string& chars() const noexcept { return chars_; }

 private:
  std::u32string chars_;
  std::unordered_map<char32_t, std::size_t> index_;
};

/// One-hot text label: indices plus width Q.
struct CharacterSequence {
  std::vector<std::size_t> indices;
  std::size_t q = 0;

  std::size_t size() const noexcept { return indices.size(); }

  /// M x Q one-hot matrix.
  Tensor one_hot() const {
    Tensor t({indices.size(), q}, 0.0);
    for (std::size_t i = 0; i < indices.size(); ++i) t(i, indices[i]) = 1.0;
    return t;
  }
};

inline CharacterSequence one_hot_encode(std::string_view text, const Alphabet& alphabet) {
  if (text.empty()) throw InvariantError("one_hot_encode: empty text");
  return CharacterSequence{alphabet.indices(text), alphabet.size()};
}

}  // namespace dsd
