#pragma once

#include "dwtk/corpus.hpp"
#include "dwtk/decode.hpp"
#include "dwtk/longform.hpp"
#include "dwtk/losses.hpp"
#include "dwtk/metrics.hpp"
#include "dwtk/report.hpp"

#include <map>
#include <string>
#include <vector>

namespace dwtk {

/// Everything a run can be configured with. The flat text form is one
/// `key = value` per line; '#' starts a comment.
struct RunConfig {
  TrainConfig train;
  LossWeights weights;
  DecodeConfig decode;
  int student_dec_layers = 2;
  int student_enc_layers = 0;  // 0 copies the whole encoder
  double lambda = 10.0;        // WER threshold, percent
  double chunk_seconds = 0.0;  // 0 picks the model default
  double overlap_seconds = -1.0;  // negative means chunk_seconds / 6

  /// Applies one key; throws ValidationError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> items() const;
  void validate() const;
};

std::map<std::string, std::string> parse_key_values(const std::string& text);
/// Reads `text` on top of `base`.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
std::string to_text(const RunConfig& config);

/// Default chunk length: 15 s for distilled models (two decoder layers or
/// fewer), 30 s otherwise.
double default_chunk_seconds(const ModelConfig& model);

struct EvalSet {
  std::string name;
  bool ood = false;
  std::vector<Sample> samples;
  CorpusContext context;
};

enum class EvalMode { short_form, long_form };
EvalMode parse_eval_mode(const std::string& name);

struct NoiseSpec {
  NoiseSource source;
  double snr_db = kNoNoise;
  std::uint64_t seed = 0;
};

struct EvalOptions {
  EvalMode mode = EvalMode::short_form;
  DecodeConfig decode;
  double chunk_seconds = 0.0;
  double overlap_seconds = -1.0;
  int jobs = 1;
  NoiseSpec noise;
};

struct Hypothesis {
  std::string dataset;
  std::string id;
  std::string reference;
  std::string hypothesis;
};

struct DatasetResult {
  std::string name;
  bool ood = false;
  std::size_t samples = 0;
  AlignmentCounts counts;
  ErrorRates rates;
  std::size_t dup5 = 0;
  double audio_seconds = 0.0;
  double wall_seconds = 0.0;

  double rtf() const { return audio_seconds > 0 ? wall_seconds / audio_seconds : 0.0; }
};

struct Aggregate {
  std::string name;  // avg_id, avg_ood, overall
  std::size_t datasets = 0;
  ErrorRates rates;  // unweighted mean over datasets
};

struct RunReport {
  std::vector<DatasetResult> datasets;
  std::vector<Aggregate> aggregates;
  std::vector<std::pair<std::string, std::string>> config;
};

/// Dataset-level rates pool edits over the dataset; aggregates are
/// unweighted means of dataset rates.
DatasetResult score_dataset(const std::string& name, bool ood, const std::vector<Hypothesis>& hyps);
std::vector<Aggregate> macro_averages(const std::vector<DatasetResult>& datasets);

RunReport evaluate(const ModelParams& model, const ModelParams* assistant, const std::vector<EvalSet>& sets,
                   const EvalOptions& options, std::vector<Hypothesis>* hypotheses = nullptr);
/// Same with any transcriber; `default_chunk` applies when
/// options.chunk_seconds is 0.
RunReport evaluate(const Transcriber& transcriber, const Vocabulary& vocab, double default_chunk,
                   const std::vector<EvalSet>& sets, const EvalOptions& options,
                   std::vector<Hypothesis>* hypotheses = nullptr);

Report to_report(const RunReport& run);
RunReport run_report_from(const Report& report);

std::string hypotheses_jsonl(const std::vector<Hypothesis>& hyps);
std::vector<Hypothesis> read_hypotheses(const std::string& path);

/// init_student followed by train().
TrainResult distill(const ModelParams& teacher, const std::vector<TrainingExample>& corpus, const RunConfig& config);

/// Plain cross-entropy training of a fresh model on ground truth.
TrainResult train_teacher(const ModelConfig& model, const std::vector<TrainingExample>& corpus,
                          const TrainConfig& config);

struct LatencyRow {
  int batch_size = 0;
  double main_seconds = 0.0;
  double spec_seconds = 0.0;
  double audio_seconds = 0.0;
  SpecDecodeStats stats;
  bool identical = true;

  double relative_latency() const { return main_seconds / spec_seconds; }
  double rtf_main() const { return main_seconds / audio_seconds; }
  double rtf_spec() const { return spec_seconds / audio_seconds; }
};

/// Times greedy decoding of the main model against batched speculative
/// decoding at each batch size: one warm-up pass, then the median of `reps`
/// passes. Every speculative output is compared with greedy.
std::vector<LatencyRow> specdec_bench(const ModelParams& main, const ModelParams& assistant,
                                      const std::vector<FeatureSequence>& inputs, const std::vector<int>& batch_sizes,
                                      int gamma, const DecodeConfig& decode, int reps);
Report latency_report(const std::vector<LatencyRow>& rows, const std::string& baseline);

struct NoisePoint {
  std::string model;
  double snr_db = kNoNoise;
  DatasetResult result;
};

std::vector<NoisePoint> noise_sweep(const std::vector<std::pair<std::string, const ModelParams*>>& models,
                                    const EvalSet& set, const std::vector<double>& snr_grid, const NoiseSpec& noise,
                                    const EvalOptions& options);
Report noise_report(const std::vector<NoisePoint>& points, const std::string& noise_kind);

enum class SweepKind { threshold, data_scaling, model_size };
SweepKind parse_sweep_kind(const std::string& name);
std::string to_string(SweepKind kind);

struct SweepInputs {
  SweepKind kind = SweepKind::threshold;
  std::vector<std::string> grid;
  RunConfig base;
  const ModelParams* teacher = nullptr;
  std::vector<PseudoSample> train;
  CorpusContext train_context;
  std::vector<EvalSet> eval;
  EvalOptions eval_options;
  int jobs = 1;
};

struct SweepPoint {
  std::string point;
  std::size_t train_samples = 0;
  double fraction_filtered = 0.0;
  int enc_layers = 0;
  int dec_layers = 0;
  RunReport report;
  ModelParams student;
};

/// threshold: grid of lambda values; data_scaling: fractions of the
/// filtered corpus (nested subsets); model_size: "E-D" encoder-decoder layer
/// counts copied from the teacher.
std::vector<SweepPoint> run_sweep(const SweepInputs& inputs);
Report sweep_report(SweepKind kind, const std::vector<SweepPoint>& points);

/// Splits "a,b,c".
std::vector<std::string> split_list(const std::string& text, char sep = ',');

}  // namespace dwtk
