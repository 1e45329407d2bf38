#pragma once

#include "dwtk/decode.hpp"
#include "dwtk/losses.hpp"
#include "dwtk/random.hpp"
#include "dwtk/signal.hpp"
#include "dwtk/vocab.hpp"

#include <algorithm>
#include <string>
#include <variant>
#include <vector>

namespace dwtk {

struct TaskSource {
  TaskKind kind = TaskKind::copy;
  std::uint64_t seed = 0;
  int length = 1;

  bool operator==(const TaskSource&) const = default;
};

/// One (input, transcript) pair. `source` is a WAV path (relative paths are
/// resolved against the manifest directory) or a synthetic task.
struct Sample {
  std::string id;
  std::string text;
  std::variant<std::string, TaskSource> source;
};

struct PseudoSample {
  Sample sample;
  std::string pseudo_text;
  double pl_wer = 0.0;
  bool truncated = false;  // the decode hit max_len without </s>
};

/// What is needed to turn a Sample into features.
struct CorpusContext {
  std::string base_dir = ".";
  SynthConfig synth;
  FrontEnd front_end;
};

FeatureSequence load_features(const Sample& sample, const CorpusContext& context);

/// JSON Lines manifests. Readers throw ValidationError naming the line on
/// malformed records or duplicate ids.
std::vector<Sample> read_manifest(const std::string& path);
std::vector<PseudoSample> read_pseudo_manifest(const std::string& path);
std::string manifest_jsonl(const std::vector<Sample>& samples);
std::string manifest_jsonl(const std::vector<PseudoSample>& samples);
void write_manifest(const std::string& path, const std::vector<Sample>& samples);
void write_manifest(const std::string& path, const std::vector<PseudoSample>& samples);

/// Directory part of a manifest path, "." when there is none.
std::string manifest_dir(const std::string& path);

/// WER(normalize(text), normalize(pseudo_text)) as a ratio.
double pseudo_label_wer(const std::string& text, const std::string& pseudo_text);

/// Transcribes every sample on up to `jobs` threads. Output order follows the
/// input and does not depend on `jobs`.
std::vector<PseudoSample> pseudo_label(const Transcriber& transcriber, const std::vector<Sample>& corpus,
                                       const CorpusContext& context, const Vocabulary& vocab,
                                       Token eos_token = kEosToken, int jobs = 1);
std::vector<PseudoSample> pseudo_label(const ModelParams& model, const std::vector<Sample>& corpus,
                                       const DecodeConfig& config, const CorpusContext& context, int jobs = 1);

struct FilterReport {
  double lambda = 0.0;  // percent
  std::size_t kept = 0;
  std::size_t dropped = 0;

  double fraction_filtered() const {
    const std::size_t n = kept + dropped;
    return n == 0 ? 0.0 : static_cast<double>(dropped) / static_cast<double>(n);
  }
};

struct FilterResult {
  std::vector<PseudoSample> kept;
  FilterReport report;
};

/// True when a label with this pl_wer (a ratio) survives threshold lambda
/// (percent). A label exactly at the threshold is kept.
bool within_threshold(double pl_wer, double lambda);

/// Drops samples with 100 * pl_wer > lambda. With `verify`, pl_wer is
/// recomputed from the texts and a mismatch is a ValidationError.
FilterResult filter_by_wer(const std::vector<PseudoSample>& corpus, double lambda, bool verify = false);

/// round(fraction * n) records chosen uniformly without replacement, kept in
/// input order. For one seed, smaller fractions select subsets of larger ones.
template <typename T>
std::vector<T> subsample(const std::vector<T>& corpus, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("fraction must lie in (0, 1]");
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(corpus.size())));
  Rng rng(derive_seed(seed, "subsample"));
  std::vector<std::size_t> pick = permutation(corpus.size(), rng);
  pick.resize(count);
  std::sort(pick.begin(), pick.end());
  std::vector<T> out;
  out.reserve(count);
  for (std::size_t i : pick) out.push_back(corpus[i]);
  return out;
}

/// Pseudo-labels become targets and the ground truth is kept for reporting.
std::vector<TrainingExample> training_examples(const std::vector<PseudoSample>& corpus, const CorpusContext& context,
                                               const Vocabulary& vocab, int jobs = 1);
/// Ground-truth targets, for training a teacher.
std::vector<TrainingExample> training_examples(const std::vector<Sample>& corpus, const CorpusContext& context,
                                               const Vocabulary& vocab, int jobs = 1);

}  // namespace dwtk
