#pragma once

#include "dwtk/types.hpp"

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dwtk {

/// Fixed synthetic lexicon: token 0 is <s>, token 1 is </s>, and word tokens
/// map to pronounceable consonant-vowel words ("ba", "be", ..., "baba", ...).
/// Every word survives normalize() unchanged, so tokenize(detokenize(t)) == t.
class Vocabulary {
 public:
  explicit Vocabulary(int size);

  int size() const { return static_cast<int>(words_.size()); }
  const std::string& word(Token token) const;
  /// Throws ValidationError for words outside the lexicon.
  Token token(std::string_view word) const;

  /// Space-joined words; <s> is skipped and decoding stops at </s>.
  std::string detokenize(const TokenSequence& tokens) const;
  /// Normalizes, then looks every word up.
  TokenSequence tokenize(std::string_view text) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, Token> index_;
};

}  // namespace dwtk
