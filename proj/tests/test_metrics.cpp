#include "dwtk/metrics.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace dwtk;

TEST_CASE("normalize strips punctuation and case") {
  CHECK(normalize("Hello, World!") == NormalizedText{"hello", "world"});
  CHECK(normalize("don't  STOP") == NormalizedText{"don't", "stop"});
  CHECK(normalize("...   ").empty());
  CHECK(normalize("").empty());
  CHECK(normalize("'quoted' rock'n'roll 42nd") == NormalizedText{"quoted", "rock'n'roll", "42nd"});
  CHECK(normalize("caf\xc3\xa9 ok") == NormalizedText{"caf", "ok"});
  CHECK(normalize("a-b\tc\n") == NormalizedText{"a", "b", "c"});
}

TEST_CASE("normalize is idempotent") {
  Rng rng(11);
  const std::string alphabet = "abcXYZ019 '',.!?-\t\xc3\xa9";
  for (int trial = 0; trial < 2000; ++trial) {
    std::string text;
    const auto n = rng.below(30);
    for (std::size_t i = 0; i < n; ++i) text += alphabet[rng.below(alphabet.size())];
    const NormalizedText once = normalize(text);
    CHECK(normalize(join(once)) == once);
    for (const auto& w : once) {
      CHECK(!w.empty());
      for (char c : w) CHECK(((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '\''));
    }
  }
}

TEST_CASE("align examples") {
  const NormalizedText ref{"the", "cat", "sat"};
  auto c = align(ref, ref);
  CHECK(c.substitutions == 0);
  CHECK(c.deletions == 0);
  CHECK(c.insertions == 0);
  CHECK(c.ref_len == 3);

  c = align(ref, {"the", "cat", "sat", "down"});
  CHECK(c.insertions == 1);
  CHECK(c.edits() == 1);

  c = align({"a", "b", "c"}, {"x"});
  CHECK(c.substitutions == 1);
  CHECK(c.deletions == 2);
  CHECK(c.insertions == 0);
}

TEST_CASE("align prefers substitution, then deletion, on ties") {
  // {a b} -> {b a}: S=2 or D=1,I=1 both cost 2.
  auto c = align({"a", "b"}, {"b", "a"});
  CHECK(c.substitutions == 2);
  CHECK(c.deletions == 0);
  CHECK(c.insertions == 0);
}

TEST_CASE("align agrees with the exhaustive oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 3000; ++trial) {
    const NormalizedText a = testing::random_words(rng, 6, 3);
    const NormalizedText b = testing::random_words(rng, 6, 3);
    const AlignmentCounts c = align(a, b);
    CHECK(c.edits() == testing::edit_oracle(a, 0, b, 0));
    CHECK(c.edits() == levenshtein(a, b));
    CHECK(c.substitutions + c.deletions <= c.ref_len);
    // Every valid alignment satisfies |hyp| = |ref| - D + I.
    CHECK(b.size() + c.deletions == a.size() + c.insertions);
  }
}

TEST_CASE("edit distance is a metric on word lists") {
  Rng rng(4);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto a = testing::random_words(rng, 20, 10);
    const auto b = testing::random_words(rng, 20, 10);
    const auto c = testing::random_words(rng, 20, 10);
    CHECK(levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c));
    const auto ab = align(a, b);
    const auto ba = align(b, a);
    CHECK(ab.edits() == ba.edits());
  }
}

TEST_CASE("error rates") {
  AlignmentCounts c;
  c.insertions = 1;
  c.ref_len = 3;
  auto r = error_rates(c);
  CHECK(r.wer == doctest::Approx(1.0 / 3.0));
  CHECK(r.ier == doctest::Approx(1.0 / 3.0));
  CHECK(r.ser == 0.0);

  c = {};
  c.ref_len = 5;
  r = error_rates(c);
  CHECK(r.wer == 0.0);
  CHECK(r.der == 0.0);

  c.substitutions = 3;
  c.deletions = 1;
  c.insertions = 2;
  c.ref_len = 4;
  CHECK(error_rates(c).wer == 1.5);

  c = {};
  CHECK_THROWS_WITH_AS(error_rates(c), "empty reference", ValidationError);
}

TEST_CASE("wer components share one denominator") {
  Rng rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    auto a = testing::random_words(rng, 6, 3);
    if (a.empty()) a.push_back("a");
    const auto c = align(a, testing::random_words(rng, 6, 3));
    const auto r = error_rates(c);
    const double n = static_cast<double>(c.ref_len);
    CHECK(c.edits() == c.substitutions + c.deletions + c.insertions);
    CHECK(r.wer == static_cast<double>(c.edits()) / n);
    CHECK(r.ier == static_cast<double>(c.insertions) / n);
  }
}

TEST_CASE("wer on raw strings normalizes both sides") {
  CHECK(wer("Hello, world!", "hello world") == 0.0);
  CHECK(wer("the cat sat", "the cat sat down") == doctest::Approx(1.0 / 3.0));
}

namespace {
std::size_t duplicates_oracle(const NormalizedText& t, std::size_t n) {
  if (t.size() < n) return 0;
  std::map<NormalizedText, int> seen;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++seen[NormalizedText(t.begin() + i, t.begin() + i + n)];
  return (t.size() - n + 1) - seen.size();
}
}  // namespace

TEST_CASE("5-gram duplicates") {
  CHECK(ngram_duplicates({"a", "b", "c", "d", "e"}, 5) == 0);
  const NormalizedText abab{"a", "b", "a", "b", "a", "b", "a", "b", "a", "b"};
  CHECK(ngram_duplicates(abab, 5) == duplicates_oracle(abab, 5));
  CHECK(ngram_duplicates(abab, 5) == 4);
  CHECK(ngram_duplicates({}, 5) == 0);
  CHECK_THROWS_AS(ngram_duplicates({"a"}, 0), ValidationError);

  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto t = testing::random_words(rng, 30, 2 + static_cast<int>(rng.below(3)));
    const std::size_t n = 1 + rng.below(6);
    CHECK(ngram_duplicates(t, n) == duplicates_oracle(t, n));
  }
}

TEST_CASE("repeating a window increases the duplicate count") {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    auto t = testing::random_words(rng, 20, 4);
    if (t.size() < 5) continue;
    const std::size_t start = rng.below(t.size() - 4);
    const std::size_t len = 5 + rng.below(t.size() - start - 4);
    NormalizedText repeated = t;
    repeated.insert(repeated.end(), t.begin() + start, t.begin() + start + len);
    CHECK(ngram_duplicates(repeated, 5) > ngram_duplicates(t, 5));
  }
}

TEST_CASE("relative error rate") {
  CHECK(std::abs(rer(10.7, 10.5) - -2.0) <= 0.5);
  CHECK(std::abs(rer(11.8, 14.0) - 18.4) <= 0.5);
  CHECK(rer(3.0, 3.0) == 0.0);
  CHECK(rer(4.0, 5.0) == doctest::Approx(25.0));
  CHECK_THROWS_WITH_AS(rer(0.0, 1.0), "undefined relative rate", ValidationError);
}
