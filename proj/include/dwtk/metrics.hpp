#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace dwtk {

/// Lowercase words over [a-z0-9'].
using NormalizedText = std::vector<std::string>;

/// Simplified English normalizer, applied identically to references and
/// hypotheses. Lowercases ASCII, keeps digits, keeps an apostrophe only when
/// both neighbours are letters, and turns every other character (punctuation,
/// non-ASCII bytes, whitespace) into a word break.
NormalizedText normalize(std::string_view text);

std::string join(const NormalizedText& words);

struct AlignmentCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_len = 0;

  std::size_t edits() const { return substitutions + deletions + insertions; }
  AlignmentCounts& operator+=(const AlignmentCounts& other);
};

/// Word-level Levenshtein alignment with unit costs. The backtrace prefers
/// the diagonal (match/substitution), then deletion, then insertion.
AlignmentCounts align(const NormalizedText& ref, const NormalizedText& hyp);

/// Word-level edit distance only.
std::size_t levenshtein(const NormalizedText& a, const NormalizedText& b);

/// All ratios share the denominator ref_len, so wer == ier + ser + der.
struct ErrorRates {
  double wer = 0.0;
  double ier = 0.0;
  double ser = 0.0;
  double der = 0.0;
};

/// Throws ValidationError("empty reference") when ref_len is zero.
ErrorRates error_rates(const AlignmentCounts& counts);

/// Normalized WER of a hypothesis text against a reference text.
double wer(std::string_view ref, std::string_view hyp);

/// Number of n-grams minus number of distinct n-grams.
std::size_t ngram_duplicates(const NormalizedText& tokens, std::size_t n = 5);

/// Relative error rate in percent: 100 * (candidate - reference) / reference.
double rer(double reference_wer, double candidate_wer);

}  // namespace dwtk
