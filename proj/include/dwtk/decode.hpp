#pragma once

#include "dwtk/model.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dwtk {

enum class DecodeStrategy { greedy, speculative, early_exit };

DecodeStrategy parse_decode_strategy(const std::string& name);
std::string to_string(DecodeStrategy strategy);

struct EarlyExitConfig {
  double threshold = 0.95;  // exit once p_top1 - p_top2 > threshold
  int floor_layer = 1;      // first layer allowed to exit

  void validate() const;
};

struct DecodeConfig {
  int max_len = 128;  // generated tokens, </s> included
  Token eos_token = kEosToken;
  DecodeStrategy strategy = DecodeStrategy::greedy;
  int gamma = 4;  // speculative candidates per round
  EarlyExitConfig early_exit;

  /// Throws ValidationError unless 0 <= max_len <= model.max_positions.
  void validate(const ModelConfig& model) const;
};

struct SpecDecodeStats {
  long candidate_rounds = 0;
  long candidates_proposed = 0;
  long candidates_accepted = 0;

  double acceptance_rate() const {
    return candidates_proposed == 0 ? 0.0 : static_cast<double>(candidates_accepted) / candidates_proposed;
  }
  SpecDecodeStats& operator+=(const SpecDecodeStats& o) {
    candidate_rounds += o.candidate_rounds;
    candidates_proposed += o.candidates_proposed;
    candidates_accepted += o.candidates_accepted;
    return *this;
  }
};

/// Index of the largest entry; ties go to the lowest index.
Token argmax(const Vector& probs);
Token argmax(const RowMatrix& probs, Eigen::Index row);

/// Greedy decoding. The output includes </s> when it was emitted.
TokenSequence greedy_decode(const ModelParams& model, const FeatureSequence& features, const DecodeConfig& config);
TokenSequence greedy_decode(const ModelParams& model, const HiddenStates& encoded, const DecodeConfig& config);

/// Source of speculative candidates.
class Drafter {
 public:
  virtual ~Drafter() = default;
  /// Called once per utterance before any proposal.
  virtual void start(const FeatureSequence& features) = 0;
  /// Up to `count` tokens continuing `prefix` (which excludes <s>).
  virtual TokenSequence propose(const TokenSequence& prefix, int count) = 0;
};

/// Greedy proposals from an assistant model, reusing its key/value cache
/// across rounds.
class ModelDrafter : public Drafter {
 public:
  explicit ModelDrafter(const ModelParams& assistant, Token eos_token = kEosToken);

  void start(const FeatureSequence& features) override;
  TokenSequence propose(const TokenSequence& prefix, int count) override;

 private:
  const ModelParams* assistant_;
  Token eos_;
  HiddenStates encoded_;
  std::unique_ptr<DecoderSession> session_;
  TokenSequence fed_;  // tokens after <s> currently in the cache
};

/// Speculative decoding with argmax-match verification. Output is identical
/// to greedy_decode(main, ...).
TokenSequence speculative_decode(const ModelParams& main, const ModelParams& assistant, const FeatureSequence& features,
                                 int gamma, const DecodeConfig& config, SpecDecodeStats* stats = nullptr);
TokenSequence speculative_decode(const ModelParams& main, Drafter& drafter, const FeatureSequence& features, int gamma,
                                 const DecodeConfig& config, SpecDecodeStats* stats = nullptr);

/// Batch-synchronous variant: a candidate position is accepted only when
/// every row still verifying matches there. Each row's output equals its
/// greedy decode.
std::vector<TokenSequence> batched_speculative_decode(const ModelParams& main, const ModelParams& assistant,
                                                      std::span<const FeatureSequence> batch, int gamma,
                                                      const DecodeConfig& config, SpecDecodeStats* stats = nullptr);
std::vector<TokenSequence> batched_speculative_decode(const ModelParams& main, std::span<Drafter* const> drafters,
                                                      std::span<const FeatureSequence> batch, int gamma,
                                                      const DecodeConfig& config, SpecDecodeStats* stats = nullptr);

struct EarlyExitResult {
  TokenSequence tokens;
  double avg_layers_used = 0.0;
  std::vector<int> layers_used;  // per emitted token
};

/// Confidence-based early exit. Skipped layers receive the exited state so
/// later positions can still attend to them.
EarlyExitResult early_exit_decode(const ModelParams& model, const FeatureSequence& features,
                                  const EarlyExitConfig& exit_config, const DecodeConfig& config);

/// Turns features into tokens; used by long-form transcription and
/// pseudo-labelling.
using Transcriber = std::function<TokenSequence(const FeatureSequence&)>;

/// Transcriber for config.strategy. `assistant` is required for speculative
/// decoding.
Transcriber make_transcriber(const ModelParams& model, const ModelParams* assistant, const DecodeConfig& config);

}  // namespace dwtk
