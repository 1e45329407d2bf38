#include "dwtk/longform.hpp"
#include "dwtk/signal.hpp"

#include "support.hpp"

#include <doctest.h>

#include <atomic>

using namespace dwtk;

namespace {

/// Brute-force reference for merge_pair: enumerate every common run.
TokenSequence merge_oracle(const TokenSequence& left, const TokenSequence& right, MergeWindows w) {
  const int nl = static_cast<int>(left.size());
  const int nr = static_cast<int>(right.size());
  const int wl = std::clamp(w.left, 0, nl);
  const int wr = std::clamp(w.right, 0, nr);
  int best = 0, bl = 0, br = 0;
  for (int ls = nl - wl; ls < nl; ++ls) {
    for (int rs = 0; rs < wr; ++rs) {
      int len = 0;
      while (ls + len < nl && rs + len < wr && left[ls + len] == right[rs + len]) ++len;
      if (len > best) {
        best = len;
        bl = ls;
        br = rs;
      }
    }
  }
  TokenSequence out;
  if (best == 0) {
    out.assign(left.begin(), left.end() - wl / 2);
    out.insert(out.end(), right.begin() + wr / 2, right.end());
  } else {
    out.assign(left.begin(), left.begin() + bl + best / 2);
    out.insert(out.end(), right.begin() + br + best / 2, right.end());
  }
  return out;
}

TokenSequence random_tokens(Rng& rng, std::size_t max_len, int alphabet) {
  TokenSequence t(rng.below(max_len + 1));
  for (auto& v : t) v = static_cast<Token>(rng.below(static_cast<std::uint64_t>(alphabet)));
  return t;
}

Transcriber copy_oracle(const SynthConfig& sc) {
  return [sc](const FeatureSequence& f) {
    TokenSequence t = nearest_prototype_decode(f, sc);
    t.push_back(kEosToken);
    return t;
  };
}

}  // namespace

TEST_CASE("chunk plan example") {
  const ChunkPlan plan = plan_chunks(100, 40, 10);
  CHECK(plan.offsets == std::vector<int>{0, 30, 60, 90});
  CHECK(plan.end(3) == 100);
  CHECK(plan_chunks(40, 40, 10).offsets == std::vector<int>{0});
  CHECK(plan_chunks(5, 40, 10).offsets == std::vector<int>{0});
  CHECK(plan_chunks(41, 40, 10).offsets == std::vector<int>{0, 30});
  CHECK_THROWS_AS(plan_chunks(0, 40, 10), ValidationError);
  CHECK_THROWS_AS(plan_chunks(100, 20, 10), ValidationError);
  CHECK_THROWS_AS(plan_chunks(100, 20, -1), ValidationError);
  CHECK(seconds_to_frames(15.0, 8.0) == 120);
  CHECK(seconds_to_frames(2.5 / 8.0, 8.0) == 3);
}

TEST_CASE("chunk plans cover the input with fixed overlaps") {
  Rng rng(1);
  for (int trial = 0; trial < 5000; ++trial) {
    const int ov = static_cast<int>(rng.below(10));
    const int c = 2 * ov + 1 + static_cast<int>(rng.below(30));
    const int t = 1 + static_cast<int>(rng.below(300));
    const ChunkPlan plan = plan_chunks(t, c, ov);
    CHECK(plan.begin(0) == 0);
    CHECK(plan.end(plan.size() - 1) == t);
    for (std::size_t i = 0; i < plan.size(); ++i) {
      CHECK(plan.end(i) - plan.begin(i) <= c);
      CHECK(plan.end(i) > plan.begin(i));
    }
    for (std::size_t i = 1; i < plan.size(); ++i) {
      CHECK(plan.end(i - 1) - plan.begin(i) == ov);
      CHECK(plan.end(i) - plan.begin(i) >= ov);
    }
  }
}

TEST_CASE("merge examples") {
  CHECK(merge_pair({1, 2, 3, 4, 5}, {4, 5, 6, 7}, {3, 3}) == TokenSequence{1, 2, 3, 4, 5, 6, 7});
  CHECK(merge_pair({1, 2, 3}, {3, 4}, {1, 1}) == TokenSequence{1, 2, 3, 4});
  // No common token: each side drops half its window.
  CHECK(merge_pair({1, 2, 3, 4}, {7, 8, 9, 10}, {2, 2}) == TokenSequence{1, 2, 3, 8, 9, 10});
  // Empty windows concatenate.
  CHECK(merge_pair({1, 2}, {3, 4}, {0, 0}) == TokenSequence{1, 2, 3, 4});
  CHECK(merge_pair({}, {3, 4}, {2, 2}) == TokenSequence{4});
  CHECK(merge_pair({1, 2}, {}, {2, 2}) == TokenSequence{1});
  // Whole sequences overlapping.
  CHECK(merge_pair({5, 6, 7}, {5, 6, 7}, {3, 3}) == TokenSequence{5, 6, 7});
  // Ties between equal-length runs go to the leftmost run in the left chunk.
  CHECK(merge_pair({1, 9, 2, 9}, {9, 3}, {4, 2}) == TokenSequence{1, 9, 3});
}

TEST_CASE("merge agrees with the brute-force oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 20000; ++trial) {
    const auto left = random_tokens(rng, 12, 3);
    const auto right = random_tokens(rng, 12, 3);
    const MergeWindows w{static_cast<int>(rng.below(14)), static_cast<int>(rng.below(14))};
    CHECK(merge_pair(left, right, w) == merge_oracle(left, right, w));
  }
}

TEST_CASE("overlap token estimate") {
  CHECK(overlap_tokens(10, 20, 4) == 2);
  CHECK(overlap_tokens(0, 20, 4) == 0);
  CHECK(overlap_tokens(7, 0, 4) == 0);
  CHECK(overlap_tokens(15, 30, 5) == 3);
}

TEST_CASE("chunked transcription equals whole-input transcription") {
  SynthConfig sc;
  const Transcriber oracle = copy_oracle(sc);
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const int c = 2 * (8 + static_cast<int>(rng.below(20)));
    const int ov = 2 * (1 + static_cast<int>(rng.below(static_cast<std::uint64_t>((c / 2 - 1) / 2))));
    const int len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(4 * c)));
    const auto s = synth_task(TaskKind::copy, rng.next(), len, sc);
    const auto full = oracle(s.features);
    for (int jobs : {1, 4, 8}) CHECK(transcribe_long(oracle, s.features, c, ov, jobs) == full);
  }
}

TEST_CASE("chunk results do not depend on the worker count") {
  SynthConfig sc;
  sc.jitter = 1.0;
  const auto s = synth_task(TaskKind::copy, 4, 80, sc);
  const ChunkPlan plan = plan_chunks(s.features.length(), 30, 6);
  const auto one = transcribe_chunks(plan, s.features, copy_oracle(sc), 1);
  for (int jobs : {2, 4, 8}) {
    const auto many = transcribe_chunks(plan, s.features, copy_oracle(sc), jobs);
    REQUIRE(many.size() == one.size());
    for (std::size_t i = 0; i < one.size(); ++i) {
      CHECK(many[i].tokens == one[i].tokens);
      CHECK(many[i].index == i);
      CHECK(many[i].ended);
    }
    CHECK(merge_chunks(plan, many) == merge_chunks(plan, one));
  }
}

TEST_CASE("chunk errors name the chunk") {
  SynthConfig sc;
  const auto s = synth_task(TaskKind::copy, 5, 40, sc);
  std::atomic<int> calls{0};
  const Transcriber failing = [&](const FeatureSequence& f) -> TokenSequence {
    ++calls;
    if (f.length() < 20) throw ValidationError("too short");
    return {2};
  };
  CHECK_THROWS_WITH_AS(transcribe_long(failing, s.features, 30, 6), "chunk 3: too short", ValidationError);
  CHECK(calls.load() == 4);
}

TEST_CASE("model-based long-form decoding with a single chunk is plain greedy") {
  const ModelParams p = init_params(testing::tiny_config(), 1);
  Rng rng(6);
  const auto f = testing::random_features(rng, 20, 6);
  DecodeConfig dc;
  dc.max_len = 20;
  CHECK(transcribe_long(p, f, 40, 6, dc) == greedy_decode(p, f, dc));
  CHECK_NOTHROW(transcribe_long(p, testing::random_features(rng, 60, 6), 20, 4, dc, 2));
}
