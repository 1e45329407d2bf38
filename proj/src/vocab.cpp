#include "dwtk/vocab.hpp"

#include "dwtk/metrics.hpp"

namespace dwtk {
namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::string syllable(std::size_t i) {
  return {kConsonants[i / kVowels.size()], kVowels[i % kVowels.size()]};
}

std::string lexicon_word(std::size_t index) {
  const std::size_t n = kConsonants.size() * kVowels.size();
  std::string word;
  std::size_t rest = index;
  do {
    word += syllable(rest % n);
    rest /= n;
  } while (rest-- > 0);
  return word;
}

}  // namespace

Vocabulary::Vocabulary(int size) {
  if (size < 2) throw ValidationError("vocabulary needs at least <s> and </s>");
  words_.reserve(static_cast<std::size_t>(size));
  words_.emplace_back("<s>");
  words_.emplace_back("</s>");
  for (int t = kFirstWordToken; t < size; ++t) {
    words_.push_back(lexicon_word(static_cast<std::size_t>(t - kFirstWordToken)));
  }
  for (std::size_t t = 0; t < words_.size(); ++t) index_.emplace(words_[t], static_cast<Token>(t));
}

const std::string& Vocabulary::word(Token token) const {
  if (token < 0 || token >= size()) throw ValidationError("token outside vocabulary");
  return words_[static_cast<std::size_t>(token)];
}

Token Vocabulary::token(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  if (it == index_.end() || it->second < kFirstWordToken) {
    throw ValidationError("word not in vocabulary: " + std::string(word));
  }
  return it->second;
}

std::string Vocabulary::detokenize(const TokenSequence& tokens) const {
  std::string text;
  for (Token t : tokens) {
    if (t == kEosToken) break;
    if (t == kBosToken) continue;
    if (!text.empty()) text.push_back(' ');
    text += word(t);
  }
  return text;
}

TokenSequence Vocabulary::tokenize(std::string_view text) const {
  TokenSequence tokens;
  for (const auto& w : normalize(text)) tokens.push_back(token(w));
  return tokens;
}

}  // namespace dwtk
