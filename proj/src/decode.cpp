#include "dwtk/decode.hpp"

#include <algorithm>

namespace dwtk {
namespace {

void check_vocab(const ModelParams& main, const ModelParams& assistant) {
  if (main.config.vocab != assistant.config.vocab) throw ValidationError("main and assistant vocabularies differ");
}

void check_gamma(int gamma) {
  if (gamma < 1) throw ValidationError("gamma must be at least 1");
}

/// Per-utterance state of speculative verification. The main-model cache
/// holds <s> and every emitted token except the last, which is `pending`.
struct Verifier {
  HiddenStates encoded;
  std::unique_ptr<DecoderSession> session;
  TokenSequence out;
  Token pending = kBosToken;
  bool done = false;

  TokenSequence cands;
  RowMatrix rows;
  int matched = 0;  // leading candidates equal to the main argmax
  bool bonus_usable = false;

  Verifier(const ModelParams& main, const FeatureSequence& features, const DecodeConfig& config)
      : encoded(encode(main, features)), session(std::make_unique<DecoderSession>(main, encoded)) {
    done = config.max_len == 0;
  }

  int remaining(const DecodeConfig& config) const { return config.max_len - static_cast<int>(out.size()); }

  void score(Drafter& drafter, int gamma, const DecodeConfig& config) {
    const int budget = std::min(gamma, remaining(config));
    cands = drafter.propose(out, budget);
    if (static_cast<int>(cands.size()) > budget) cands.resize(static_cast<std::size_t>(budget));
    const auto eos = std::find(cands.begin(), cands.end(), config.eos_token);
    if (eos != cands.end()) cands.erase(eos + 1, cands.end());

    bonus_usable = (cands.empty() || cands.back() != config.eos_token) &&
                   static_cast<int>(out.size() + cands.size()) < config.max_len;
    const std::size_t fed = bonus_usable || cands.empty() ? cands.size() : cands.size() - 1;
    TokenSequence block{pending};
    block.insert(block.end(), cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(fed));
    rows = session->feed(block).probs;

    matched = 0;
    while (matched < static_cast<int>(cands.size()) && cands[static_cast<std::size_t>(matched)] == argmax(rows, matched)) {
      ++matched;
    }
  }

  bool exhausted() const { return matched == static_cast<int>(cands.size()); }

  /// Accepts the first `accept` candidates (at most `matched`), then emits
  /// the main model's own token unless the row is finished or full.
  int commit(int accept, const DecodeConfig& config) {
    accept = std::min(accept, matched);
    for (int j = 0; j < accept; ++j) {
      const Token t = cands[static_cast<std::size_t>(j)];
      out.push_back(t);
      if (t == config.eos_token) done = true;
    }
    if (!done && remaining(config) > 0 && (accept < static_cast<int>(cands.size()) || bonus_usable)) {
      const Token t = argmax(rows, accept);
      out.push_back(t);
      if (t == config.eos_token) done = true;
    }
    if (remaining(config) == 0) done = true;
    session->truncate(static_cast<int>(out.size()));
    pending = out.back();
    return accept;
  }
};

}  // namespace

DecodeStrategy parse_decode_strategy(const std::string& name) {
  if (name == "greedy") return DecodeStrategy::greedy;
  if (name == "speculative") return DecodeStrategy::speculative;
  if (name == "early_exit" || name == "early-exit") return DecodeStrategy::early_exit;
  throw ValidationError("unknown decode strategy: " + name);
}

std::string to_string(DecodeStrategy strategy) {
  switch (strategy) {
    case DecodeStrategy::greedy: return "greedy";
    case DecodeStrategy::speculative: return "speculative";
    case DecodeStrategy::early_exit: return "early_exit";
  }
  return "greedy";
}

void EarlyExitConfig::validate() const {
  if (!(threshold > 0 && threshold <= 1)) throw ValidationError("exit threshold must lie in (0, 1]");
  if (floor_layer < 1) throw ValidationError("floor layer must be at least 1");
}

void DecodeConfig::validate(const ModelConfig& model) const {
  if (max_len < 0 || max_len > model.max_positions) throw ValidationError("max_len must lie in [0, max_positions]");
  if (eos_token < 0 || eos_token >= model.vocab) throw ValidationError("eos token outside vocabulary");
  check_gamma(gamma);
  early_exit.validate();
}

Token argmax(const Vector& probs) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return static_cast<Token>(best);
}

Token argmax(const RowMatrix& probs, Eigen::Index row) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < probs.cols(); ++i) {
    if (probs(row, i) > probs(row, best)) best = i;
  }
  return static_cast<Token>(best);
}

TokenSequence greedy_decode(const ModelParams& model, const FeatureSequence& features, const DecodeConfig& config) {
  config.validate(model.config);
  return greedy_decode(model, encode(model, features), config);
}

TokenSequence greedy_decode(const ModelParams& model, const HiddenStates& encoded, const DecodeConfig& config) {
  config.validate(model.config);
  TokenSequence out;
  if (config.max_len == 0) return out;
  DecoderSession session(model, encoded);
  Vector probs = session.next(kBosToken);
  while (true) {
    const Token t = argmax(probs);
    out.push_back(t);
    if (t == config.eos_token || static_cast<int>(out.size()) == config.max_len) break;
    probs = session.next(t);
  }
  return out;
}

ModelDrafter::ModelDrafter(const ModelParams& assistant, Token eos_token) : assistant_(&assistant), eos_(eos_token) {}

void ModelDrafter::start(const FeatureSequence& features) {
  encoded_ = encode(*assistant_, features);
  session_ = std::make_unique<DecoderSession>(*assistant_, encoded_);
  fed_.clear();
}

TokenSequence ModelDrafter::propose(const TokenSequence& prefix, int count) {
  if (!session_) throw ValidationError("drafter used before start()");
  TokenSequence proposals;
  const int capacity = assistant_->config.max_positions - static_cast<int>(prefix.size());
  count = std::min(count, capacity);
  if (count <= 0) return proposals;

  // Keep the cached positions shared with the new prefix; the last input
  // is always re-fed to recover its distribution.
  std::size_t common = 0;
  while (common < fed_.size() && common < prefix.size() && fed_[common] == prefix[common]) ++common;
  const auto keep = static_cast<int>(std::min(common + 1, prefix.size()));  // cached inputs: <s> + prefix[0..keep-1)
  session_->truncate(std::min(session_->length(), keep));
  TokenSequence inputs{kBosToken};
  inputs.insert(inputs.end(), prefix.begin(), prefix.end());
  const std::span<const Token> rest(inputs.data() + session_->length(), inputs.size() - session_->length());
  RowMatrix probs = session_->feed(rest).probs;
  fed_ = prefix;

  Vector p = probs.row(probs.rows() - 1).transpose();
  for (int k = 0; k < count; ++k) {
    const Token t = argmax(p);
    proposals.push_back(t);
    if (t == eos_ || k + 1 == count) break;
    p = session_->next(t);
    fed_.push_back(t);
  }
  return proposals;
}

TokenSequence speculative_decode(const ModelParams& main, const ModelParams& assistant, const FeatureSequence& features,
                                 int gamma, const DecodeConfig& config, SpecDecodeStats* stats) {
  check_vocab(main, assistant);
  ModelDrafter drafter(assistant, config.eos_token);
  return speculative_decode(main, drafter, features, gamma, config, stats);
}

TokenSequence speculative_decode(const ModelParams& main, Drafter& drafter, const FeatureSequence& features, int gamma,
                                 const DecodeConfig& config, SpecDecodeStats* stats) {
  config.validate(main.config);
  check_gamma(gamma);
  Verifier row(main, features, config);
  SpecDecodeStats local;
  if (!row.done) drafter.start(features);
  while (!row.done) {
    row.score(drafter, gamma, config);
    ++local.candidate_rounds;
    local.candidates_proposed += static_cast<long>(row.cands.size());
    local.candidates_accepted += row.commit(row.matched, config);
  }
  if (stats != nullptr) *stats += local;
  return row.out;
}

std::vector<TokenSequence> batched_speculative_decode(const ModelParams& main, const ModelParams& assistant,
                                                      std::span<const FeatureSequence> batch, int gamma,
                                                      const DecodeConfig& config, SpecDecodeStats* stats) {
  check_vocab(main, assistant);
  std::vector<std::unique_ptr<ModelDrafter>> owned;
  std::vector<Drafter*> drafters;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    owned.push_back(std::make_unique<ModelDrafter>(assistant, config.eos_token));
    drafters.push_back(owned.back().get());
  }
  return batched_speculative_decode(main, drafters, batch, gamma, config, stats);
}

std::vector<TokenSequence> batched_speculative_decode(const ModelParams& main, std::span<Drafter* const> drafters,
                                                      std::span<const FeatureSequence> batch, int gamma,
                                                      const DecodeConfig& config, SpecDecodeStats* stats) {
  if (batch.empty()) throw ValidationError("empty batch");
  if (drafters.size() != batch.size()) throw ValidationError("one drafter per batch row is required");
  config.validate(main.config);
  check_gamma(gamma);

  std::vector<Verifier> rows;
  rows.reserve(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    rows.emplace_back(main, batch[r], config);
    if (!rows.back().done) drafters[r]->start(batch[r]);
  }
  SpecDecodeStats local;
  while (true) {
    std::vector<std::size_t> active;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (!rows[r].done) active.push_back(r);
    }
    if (active.empty()) break;
    ++local.candidate_rounds;

    // Rows that matched every candidate place no limit on the others.
    int accept = config.max_len;
    for (std::size_t r : active) {
      rows[r].score(*drafters[r], gamma, config);
      local.candidates_proposed += static_cast<long>(rows[r].cands.size());
      if (!rows[r].exhausted()) accept = std::min(accept, rows[r].matched);
    }
    for (std::size_t r : active) local.candidates_accepted += rows[r].commit(accept, config);
  }
  if (stats != nullptr) *stats += local;

  std::vector<TokenSequence> out;
  out.reserve(rows.size());
  for (auto& row : rows) out.push_back(std::move(row.out));
  return out;
}

EarlyExitResult early_exit_decode(const ModelParams& model, const FeatureSequence& features,
                                  const EarlyExitConfig& exit_config, const DecodeConfig& config) {
  exit_config.validate();
  config.validate(model.config);
  EarlyExitResult result;
  if (config.max_len == 0) return result;
  const HiddenStates encoded = encode(model, features);
  DecoderSession session(model, encoded);
  const int layers = model.config.dec_layers;

  Token pending = kBosToken;
  long total_layers = 0;
  while (static_cast<int>(result.tokens.size()) < config.max_len) {
    Vector x = session.begin(pending);
    int used = layers;
    std::optional<Token> token;
    for (int l = 0; l < layers; ++l) {
      x = session.run_layer(l, x);
      if (l + 1 < exit_config.floor_layer || l + 1 == layers) continue;
      const Vector p = session.probabilities(x);
      const Token top = argmax(p);
      double second = 0.0;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (i != top) second = std::max(second, p[i]);
      }
      if (p[top] - second > exit_config.threshold) {
        token = top;
        used = l + 1;
        for (int m = l + 1; m < layers; ++m) session.skip_layer(m, x);
        break;
      }
    }
    if (!token) token = argmax(session.probabilities(x));
    session.finish();
    result.tokens.push_back(*token);
    result.layers_used.push_back(used);
    total_layers += used;
    if (*token == config.eos_token) break;
    pending = *token;
  }
  result.avg_layers_used = static_cast<double>(total_layers) / static_cast<double>(result.tokens.size());
  return result;
}

Transcriber make_transcriber(const ModelParams& model, const ModelParams* assistant, const DecodeConfig& config) {
  config.validate(model.config);
  switch (config.strategy) {
    case DecodeStrategy::greedy:
      return [&model, config](const FeatureSequence& f) { return greedy_decode(model, f, config); };
    case DecodeStrategy::speculative:
      if (assistant == nullptr) throw ValidationError("speculative decoding needs an assistant model");
      check_vocab(model, *assistant);
      return [&model, assistant, config](const FeatureSequence& f) {
        return speculative_decode(model, *assistant, f, config.gamma, config);
      };
    case DecodeStrategy::early_exit:
      return [&model, config](const FeatureSequence& f) {
        return early_exit_decode(model, f, config.early_exit, config).tokens;
      };
  }
  throw ValidationError("unknown decode strategy");
}

}  // namespace dwtk
