#include "dwtk/decode.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace dwtk;

namespace {

/// Proposes one token guaranteed to differ from the main model's choice.
class WrongDrafter : public Drafter {
 public:
  explicit WrongDrafter(const ModelParams& main) : main_(&main) {}
  void start(const FeatureSequence& features) override { encoded_ = encode(*main_, features); }
  TokenSequence propose(const TokenSequence& prefix, int) override {
    const Token best = argmax(decode_step(*main_, prefix, encoded_).probs);
    return {(best + 1) % main_->config.vocab};
  }

 private:
  const ModelParams* main_;
  HiddenStates encoded_;
};

/// Greedy decoding without the key/value cache: a full decode_step per token.
TokenSequence uncached_greedy(const ModelParams& model, const FeatureSequence& f, const DecodeConfig& config) {
  const HiddenStates h = encode(model, f);
  TokenSequence out;
  while (static_cast<int>(out.size()) < config.max_len) {
    out.push_back(argmax(decode_step(model, out, h).probs));
    if (out.back() == config.eos_token) break;
  }
  return out;
}

DecodeConfig config_with(int max_len) {
  DecodeConfig c;
  c.max_len = max_len;
  return c;
}

}  // namespace

TEST_CASE("argmax prefers the lowest index on ties") {
  Vector p(4);
  p << 0.1, 0.4, 0.4, 0.1;
  CHECK(argmax(p) == 1);
  RowMatrix m(1, 3);
  m << 0.5, 0.5, 0.0;
  CHECK(argmax(m, 0) == 0);
}

TEST_CASE("decode config parsing and validation") {
  CHECK(parse_decode_strategy("early_exit") == DecodeStrategy::early_exit);
  CHECK(to_string(DecodeStrategy::speculative) == "speculative");
  CHECK_THROWS_AS(parse_decode_strategy("beam"), ValidationError);
  const auto mc = testing::tiny_config();
  CHECK_THROWS_AS(config_with(-1).validate(mc), ValidationError);
  CHECK_THROWS_AS(config_with(mc.max_positions + 1).validate(mc), ValidationError);
  CHECK_THROWS_AS((EarlyExitConfig{0.0, 1}.validate()), ValidationError);
  CHECK_THROWS_AS((EarlyExitConfig{1.5, 1}.validate()), ValidationError);
  CHECK_NOTHROW((EarlyExitConfig{1.0, 1}.validate()));
}

TEST_CASE("greedy decoding") {
  const ModelParams p = init_params(testing::tiny_config(), 1);
  Rng rng(1);
  const auto f = testing::random_features(rng, 10, 6);
  CHECK(greedy_decode(p, f, config_with(0)).empty());
  const TokenSequence first = greedy_decode(p, f, config_with(20));
  for (int run = 0; run < 100; ++run) CHECK(greedy_decode(p, f, config_with(20)) == first);
  CHECK(first == uncached_greedy(p, f, config_with(20)));
  CHECK(greedy_decode(p, encode(p, f), config_with(20)) == first);
}

TEST_CASE("greedy decoding is prefix stable") {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const ModelParams p = init_params(testing::tiny_config(4 + static_cast<int>(rng.below(8))), trial);
    const auto f = testing::random_features(rng, 1 + static_cast<int>(rng.below(20)), 6);
    const TokenSequence full = greedy_decode(p, f, config_with(30));
    for (int n = 0; n <= 30; ++n) {
      const TokenSequence cut = greedy_decode(p, f, config_with(n));
      CHECK(cut.size() == std::min<std::size_t>(n, full.size()));
      CHECK(std::equal(cut.begin(), cut.end(), full.begin()));
    }
    CHECK(full == uncached_greedy(p, f, config_with(30)));
  }
}

TEST_CASE("self-assisted speculative decoding accepts everything") {
  const ModelParams p = init_params(testing::tiny_config(), 3);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = testing::random_features(rng, 12, 6);
    SpecDecodeStats stats;
    const auto out = speculative_decode(p, p, f, 4, config_with(25), &stats);
    CHECK(out == greedy_decode(p, f, config_with(25)));
    CHECK(stats.acceptance_rate() == 1.0);
    CHECK(stats.candidates_accepted == stats.candidates_proposed);
  }
}

TEST_CASE("a drafter that is always wrong costs one round per token") {
  const ModelParams p = init_params(testing::tiny_config(), 4);
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = testing::random_features(rng, 12, 6);
    WrongDrafter wrong(p);
    SpecDecodeStats stats;
    const auto out = speculative_decode(p, wrong, f, 3, config_with(25), &stats);
    CHECK(out == greedy_decode(p, f, config_with(25)));
    CHECK(stats.acceptance_rate() == 0.0);
    CHECK(stats.candidate_rounds == static_cast<long>(out.size()));
  }
}

TEST_CASE("speculative decoding equals greedy decoding on random model pairs") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int vocab = 3 + static_cast<int>(rng.below(10));
    const ModelParams main = init_params(testing::tiny_config(vocab, 1 + static_cast<int>(rng.below(3))), rng.next());
    const ModelParams assistant =
        rng.below(2) == 0 ? testing::perturbed(main, 0.05, rng.next()) : init_params(testing::tiny_config(vocab, 1), rng.next());
    const int gamma = 1 + static_cast<int>(rng.below(8));
    const auto config = config_with(static_cast<int>(rng.below(30)));
    const auto f = testing::random_features(rng, 1 + static_cast<int>(rng.below(30)), 6);
    SpecDecodeStats stats;
    const auto out = speculative_decode(main, assistant, f, gamma, config, &stats);
    CHECK(out == greedy_decode(main, f, config));
    CHECK(stats.candidates_accepted <= stats.candidates_proposed);
    CHECK(stats.candidates_accepted + stats.candidate_rounds >= static_cast<long>(out.size()));
  }
}

TEST_CASE("batched speculative decoding") {
  Rng rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    const int vocab = 3 + static_cast<int>(rng.below(10));
    const ModelParams main = init_params(testing::tiny_config(vocab, 2), rng.next());
    const ModelParams assistant = testing::perturbed(main, 0.1, rng.next());
    const int gamma = 1 + static_cast<int>(rng.below(8));
    const auto config = config_with(1 + static_cast<int>(rng.below(30)));
    std::vector<FeatureSequence> batch;
    const std::size_t n = 1 + rng.below(8);
    for (std::size_t i = 0; i < n; ++i) batch.push_back(testing::random_features(rng, 1 + static_cast<int>(rng.below(20)), 6));
    SpecDecodeStats stats;
    const auto outs = batched_speculative_decode(main, assistant, batch, gamma, config, &stats);
    REQUIRE(outs.size() == n);
    for (std::size_t i = 0; i < n; ++i) CHECK(outs[i] == greedy_decode(main, batch[i], config));
    CHECK(stats.candidates_accepted <= stats.candidates_proposed);

    // A batch of one behaves exactly like the single-row decoder.
    SpecDecodeStats single;
    SpecDecodeStats one;
    const auto a = speculative_decode(main, assistant, batch[0], gamma, config, &single);
    const auto b = batched_speculative_decode(main, assistant, std::span(batch).first(1), gamma, config, &one);
    CHECK(b[0] == a);
    CHECK(one.candidate_rounds == single.candidate_rounds);
    CHECK(one.candidates_proposed == single.candidates_proposed);
    CHECK(one.candidates_accepted == single.candidates_accepted);

    // Copies of one input keep the single-row acceptance.
    const std::vector<FeatureSequence> copies(4, batch[0]);
    SpecDecodeStats copied;
    const auto c = batched_speculative_decode(main, assistant, copies, gamma, config, &copied);
    for (const auto& row : c) CHECK(row == a);
    CHECK(copied.candidate_rounds == single.candidate_rounds);
    CHECK(copied.acceptance_rate() == single.acceptance_rate());
  }
}

TEST_CASE("speculative argument errors") {
  const ModelParams main = init_params(testing::tiny_config(12), 1);
  const ModelParams other = init_params(testing::tiny_config(10), 2);
  Rng rng(7);
  const auto f = testing::random_features(rng, 6, 6);
  CHECK_THROWS_AS(speculative_decode(main, other, f, 4, config_with(10)), ValidationError);
  CHECK_THROWS_AS(speculative_decode(main, main, f, 0, config_with(10)), ValidationError);
  CHECK_THROWS_AS(batched_speculative_decode(main, main, std::span<const FeatureSequence>{}, 4, config_with(10)),
                  ValidationError);
  DecodeConfig spec = config_with(10);
  spec.strategy = DecodeStrategy::speculative;
  CHECK_THROWS_AS(make_transcriber(main, nullptr, spec), ValidationError);
  CHECK(make_transcriber(main, &main, spec)(f) == greedy_decode(main, f, spec));
}

TEST_CASE("early exit at threshold one uses every layer") {
  const ModelParams p = init_params(testing::tiny_config(12, 4), 8);
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = testing::random_features(rng, 10, 6);
    const auto r = early_exit_decode(p, f, EarlyExitConfig{1.0, 1}, config_with(20));
    CHECK(r.avg_layers_used == 4.0);
    for (int used : r.layers_used) CHECK(used == 4);
    CHECK(r.tokens == greedy_decode(p, f, config_with(20)));
  }
}

TEST_CASE("tiny thresholds exit at the first layer") {
  const ModelParams p = init_params(testing::tiny_config(12, 4), 9);
  Rng rng(9);
  const auto f = testing::random_features(rng, 10, 6);
  const auto r = early_exit_decode(p, f, EarlyExitConfig{1e-12, 1}, config_with(20));
  for (int used : r.layers_used) CHECK(used == 1);
  CHECK(r.avg_layers_used == 1.0);

  const auto floored = early_exit_decode(p, f, EarlyExitConfig{1e-12, 3}, config_with(20));
  for (int used : floored.layers_used) CHECK(used == 3);
  CHECK(early_exit_decode(p, f, EarlyExitConfig{0.5, 1}, config_with(0)).tokens.empty());
}

TEST_CASE("early exit layer counts stay in range") {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelParams p = init_params(testing::tiny_config(6, 3), rng.next());
    const auto f = testing::random_features(rng, 8, 6);
    const auto r = early_exit_decode(p, f, EarlyExitConfig{rng.uniform(0.01, 1.0), 1}, config_with(20));
    REQUIRE(r.layers_used.size() == r.tokens.size());
    for (int used : r.layers_used) {
      CHECK(used >= 1);
      CHECK(used <= 3);
    }
  }
}
