#include "dwtk/metrics.hpp"

#include "dwtk/types.hpp"

#include <algorithm>
#include <set>

namespace dwtk {
namespace {

bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

char lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

}  // namespace

NormalizedText normalize(std::string_view text) {
  NormalizedText words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (is_alpha(c) || is_digit(c)) {
      current.push_back(lower(c));
    } else if (c == '\'' && i > 0 && i + 1 < text.size() && is_alpha(text[i - 1]) &&
               is_alpha(text[i + 1])) {
      current.push_back('\'');
    } else {
      flush();
    }
  }
  flush();
  return words;
}

std::string join(const NormalizedText& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

AlignmentCounts& AlignmentCounts::operator+=(const AlignmentCounts& other) {
  substitutions += other.substitutions;
  deletions += other.deletions;
  insertions += other.insertions;
  ref_len += other.ref_len;
  return *this;
}

AlignmentCounts align(const NormalizedText& ref, const NormalizedText& hyp) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  // cost(i, j): edits to turn ref[0, i) into hyp[0, j)
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return cost[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  AlignmentCounts counts;
  counts.ref_len = n;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        if (!same) ++counts.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++counts.deletions;
      --i;
    } else {
      ++counts.insertions;
      --j;
    }
  }
  return counts;
}

std::size_t levenshtein(const NormalizedText& a, const NormalizedText& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({diag + (a[i - 1] == b[j - 1] ? 0 : 1), up + 1, row[j - 1] + 1});
      diag = up;
    }
  }
  return row[b.size()];
}

ErrorRates error_rates(const AlignmentCounts& counts) {
  if (counts.ref_len == 0) throw ValidationError("empty reference");
  const auto n = static_cast<double>(counts.ref_len);
  return ErrorRates{
      .wer = static_cast<double>(counts.edits()) / n,
      .ier = static_cast<double>(counts.insertions) / n,
      .ser = static_cast<double>(counts.substitutions) / n,
      .der = static_cast<double>(counts.deletions) / n,
  };
}

double wer(std::string_view ref, std::string_view hyp) {
  return error_rates(align(normalize(ref), normalize(hyp))).wer;
}

std::size_t ngram_duplicates(const NormalizedText& tokens, std::size_t n) {
  if (n == 0) throw ValidationError("n-gram order must be at least 1");
  if (tokens.size() < n) return 0;
  std::set<std::vector<std::string>> distinct;
  const std::size_t total = tokens.size() - n + 1;
  for (std::size_t i = 0; i < total; ++i) {
    distinct.emplace(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                     tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
  }
  return total - distinct.size();
}

double rer(double reference_wer, double candidate_wer) {
  if (reference_wer == 0.0) throw ValidationError("undefined relative rate");
  return 100.0 * (candidate_wer - reference_wer) / reference_wer;
}

}  // namespace dwtk
