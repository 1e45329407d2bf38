#include "dwtk/harness.hpp"

#include "dwtk/checkpoint.hpp"
#include "dwtk/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace dwtk {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ValidationError(key + ": expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    if (!v.empty() && v[0] != '-') out = std::stoull(v, &used, 0);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ValidationError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    return parse_number(v);
  } catch (const ValidationError&) {
    throw ValidationError(key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) { return format_number(v); }
std::string fmt(std::size_t v) { return format_number(static_cast<long long>(v)); }
std::string fmt(int v) { return format_number(static_cast<long long>(v)); }
std::string fmt(bool v) { return v ? "true" : "false"; }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string& v = value;
  if (key == "steps") train.steps = to_int(key, v);
  else if (key == "batch_size") train.batch_size = to_int(key, v);
  else if (key == "warmup_steps") train.warmup_steps = to_int(key, v);
  else if (key == "peak_lr") train.peak_lr = to_double(key, v);
  else if (key == "beta1") train.beta1 = to_double(key, v);
  else if (key == "beta2") train.beta2 = to_double(key, v);
  else if (key == "epsilon") train.epsilon = to_double(key, v);
  else if (key == "weight_decay") train.weight_decay = to_double(key, v);
  else if (key == "max_grad_norm") train.max_grad_norm = to_double(key, v);
  else if (key == "seed") train.seed = to_u64(key, v);
  else if (key == "freeze_encoder") train.freeze_encoder = to_bool(key, v);
  else if (key == "log_ce") train.log_ce = to_bool(key, v);
  else if (key == "jobs") train.jobs = to_int(key, v);
  else if (key == "alpha_kl") weights.alpha_kl = to_double(key, v);
  else if (key == "alpha_pl") weights.alpha_pl = to_double(key, v);
  else if (key == "alpha_mse") weights.alpha_mse = to_double(key, v);
  else if (key == "temperature") weights.temperature = to_double(key, v);
  else if (key == "max_len") decode.max_len = to_int(key, v);
  else if (key == "eos_token") decode.eos_token = to_int(key, v);
  else if (key == "strategy") decode.strategy = parse_decode_strategy(v);
  else if (key == "gamma") decode.gamma = to_int(key, v);
  else if (key == "exit_threshold") decode.early_exit.threshold = to_double(key, v);
  else if (key == "floor_layer") decode.early_exit.floor_layer = to_int(key, v);
  else if (key == "student_dec_layers") student_dec_layers = to_int(key, v);
  else if (key == "student_enc_layers") student_enc_layers = to_int(key, v);
  else if (key == "lambda") lambda = to_double(key, v);
  else if (key == "chunk_seconds") chunk_seconds = to_double(key, v);
  else if (key == "overlap_seconds") overlap_seconds = to_double(key, v);
  else throw ValidationError("unknown config key: " + key);
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
  return {
      {"steps", fmt(train.steps)},
      {"batch_size", fmt(train.batch_size)},
      {"warmup_steps", fmt(train.warmup_steps)},
      {"peak_lr", fmt(train.peak_lr)},
      {"beta1", fmt(train.beta1)},
      {"beta2", fmt(train.beta2)},
      {"epsilon", fmt(train.epsilon)},
      {"weight_decay", fmt(train.weight_decay)},
      {"max_grad_norm", fmt(train.max_grad_norm)},
      {"seed", std::to_string(train.seed)},
      {"freeze_encoder", fmt(train.freeze_encoder)},
      {"log_ce", fmt(train.log_ce)},
      {"jobs", fmt(train.jobs)},
      {"alpha_kl", fmt(weights.alpha_kl)},
      {"alpha_pl", fmt(weights.alpha_pl)},
      {"alpha_mse", fmt(weights.alpha_mse)},
      {"temperature", fmt(weights.temperature)},
      {"max_len", fmt(decode.max_len)},
      {"eos_token", fmt(decode.eos_token)},
      {"strategy", to_string(decode.strategy)},
      {"gamma", fmt(decode.gamma)},
      {"exit_threshold", fmt(decode.early_exit.threshold)},
      {"floor_layer", fmt(decode.early_exit.floor_layer)},
      {"student_dec_layers", fmt(student_dec_layers)},
      {"student_enc_layers", fmt(student_enc_layers)},
      {"lambda", fmt(lambda)},
      {"chunk_seconds", fmt(chunk_seconds)},
      {"overlap_seconds", fmt(overlap_seconds)},
  };
}

void RunConfig::validate() const {
  train.validate();
  weights.validate();
  if (decode.max_len < 0) throw ValidationError("max_len must be non-negative");
  if (decode.gamma < 1) throw ValidationError("gamma must be at least 1");
  decode.early_exit.validate();
  if (student_dec_layers < 2) throw ValidationError("student_dec_layers must be at least 2");
  if (student_enc_layers < 0) throw ValidationError("student_enc_layers must be non-negative");
  if (!(lambda >= 0)) throw ValidationError("lambda must be non-negative");
  if (chunk_seconds < 0) throw ValidationError("chunk_seconds must be non-negative");
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("config line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ValidationError("config line " + std::to_string(number) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  for (const auto& [k, v] : parse_key_values(text)) base.set(k, v);
  return base;
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& [k, v] : config.items()) out += k + " = " + v + "\n";
  return out;
}

double default_chunk_seconds(const ModelConfig& model) { return model.dec_layers <= 2 ? 15.0 : 30.0; }

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "short") return EvalMode::short_form;
  if (name == "long") return EvalMode::long_form;
  throw ValidationError("unknown eval mode: " + name);
}

DatasetResult score_dataset(const std::string& name, bool ood, const std::vector<Hypothesis>& hyps) {
  DatasetResult r;
  r.name = name;
  r.ood = ood;
  r.samples = hyps.size();
  for (const auto& h : hyps) {
    const NormalizedText hyp = normalize(h.hypothesis);
    r.counts += align(normalize(h.reference), hyp);
    r.dup5 += ngram_duplicates(hyp, 5);
  }
  r.rates = error_rates(r.counts);
  return r;
}

std::vector<Aggregate> macro_averages(const std::vector<DatasetResult>& datasets) {
  std::vector<Aggregate> out;
  auto add = [&](const std::string& name, auto keep) {
    Aggregate a{name, 0, {}};
    for (const auto& d : datasets) {
      if (!keep(d)) continue;
      ++a.datasets;
      a.rates.wer += d.rates.wer;
      a.rates.ier += d.rates.ier;
      a.rates.ser += d.rates.ser;
      a.rates.der += d.rates.der;
    }
    if (a.datasets == 0) return;
    const double n = static_cast<double>(a.datasets);
    a.rates.wer /= n;
    a.rates.ier /= n;
    a.rates.ser /= n;
    a.rates.der /= n;
    out.push_back(a);
  };
  add("avg_id", [](const DatasetResult& d) { return !d.ood; });
  add("avg_ood", [](const DatasetResult& d) { return d.ood; });
  add("overall", [](const DatasetResult&) { return true; });
  return out;
}

RunReport evaluate(const ModelParams& model, const ModelParams* assistant, const std::vector<EvalSet>& sets,
                   const EvalOptions& options, std::vector<Hypothesis>* hypotheses) {
  return evaluate(make_transcriber(model, assistant, options.decode), Vocabulary(model.config.vocab),
                  default_chunk_seconds(model.config), sets, options, hypotheses);
}

RunReport evaluate(const Transcriber& transcriber, const Vocabulary& vocab, double default_chunk,
                   const std::vector<EvalSet>& sets, const EvalOptions& options,
                   std::vector<Hypothesis>* hypotheses) {
  RunReport run;
  for (const auto& set : sets) {
    std::vector<Hypothesis> hyps(set.samples.size());
    std::vector<double> seconds(set.samples.size());
    const auto start = Clock::now();
    auto transcribe = [&](std::size_t i, int chunk_jobs) {
      const Sample& s = set.samples[i];
      FeatureSequence f = load_features(s, set.context);
      if (options.noise.snr_db != kNoNoise) {
        f = add_noise_to_features(f, options.noise.source, options.noise.snr_db,
                                  derive_seed(options.noise.seed, s.id), set.context.front_end);
      }
      seconds[i] = f.seconds();
      TokenSequence tokens;
      if (options.mode == EvalMode::short_form) {
        tokens = transcriber(f);
      } else {
        const double chunk_s = options.chunk_seconds > 0 ? options.chunk_seconds : default_chunk;
        const double overlap_s = options.overlap_seconds >= 0 ? options.overlap_seconds : chunk_s / 6.0;
        tokens = transcribe_long(transcriber, f, seconds_to_frames(chunk_s, f.frame_rate),
                                 seconds_to_frames(overlap_s, f.frame_rate), chunk_jobs, options.decode.eos_token);
      }
      hyps[i] = {set.name, s.id, s.text, vocab.detokenize(tokens)};
    };
    if (options.mode == EvalMode::short_form) {
      parallel_for(set.samples.size(), options.jobs, [&](std::size_t i) { transcribe(i, 1); });
    } else {
      for (std::size_t i = 0; i < set.samples.size(); ++i) transcribe(i, options.jobs);
    }
    DatasetResult r = score_dataset(set.name, set.ood, hyps);
    r.wall_seconds = seconds_since(start);
    for (double s : seconds) r.audio_seconds += s;
    run.datasets.push_back(r);
    if (hypotheses != nullptr) hypotheses->insert(hypotheses->end(), hyps.begin(), hyps.end());
  }
  run.aggregates = macro_averages(run.datasets);
  return run;
}

Report to_report(const RunReport& run) {
  Report report;
  report.kind = "eval";
  for (const auto& [k, v] : run.config) report.meta.emplace_back("config." + k, v);
  report.columns = {"dataset", "split", "samples", "ref_words", "substitutions", "deletions", "insertions", "wer",
                    "ier", "ser", "der", "dup5", "audio_seconds", "wall_seconds", "rtf"};
  for (const auto& d : run.datasets) {
    report.add_row({d.name, d.ood ? "ood" : "id", fmt(d.samples), fmt(d.counts.ref_len), fmt(d.counts.substitutions),
                    fmt(d.counts.deletions), fmt(d.counts.insertions), fmt(d.rates.wer), fmt(d.rates.ier),
                    fmt(d.rates.ser), fmt(d.rates.der), fmt(d.dup5), fmt(d.audio_seconds), fmt(d.wall_seconds),
                    fmt(d.rtf())});
  }
  for (const auto& a : run.aggregates) {
    report.add_row({a.name, "aggregate", fmt(a.datasets), "", "", "", "", fmt(a.rates.wer), fmt(a.rates.ier),
                    fmt(a.rates.ser), fmt(a.rates.der), "", "", "", ""});
  }
  return report;
}

RunReport run_report_from(const Report& report) {
  RunReport run;
  for (const auto& [k, v] : report.meta) {
    if (k.starts_with("config.")) run.config.emplace_back(k.substr(7), v);
  }
  auto size = [&](std::size_t r, const std::string& c) { return static_cast<std::size_t>(report.number(r, c)); };
  for (std::size_t r = 0; r < report.rows.size(); ++r) {
    const std::string& split = report.cell(r, "split");
    ErrorRates rates{report.number(r, "wer"), report.number(r, "ier"), report.number(r, "ser"),
                     report.number(r, "der")};
    if (split == "aggregate") {
      run.aggregates.push_back({report.cell(r, "dataset"), size(r, "samples"), rates});
      continue;
    }
    if (split != "id" && split != "ood") throw ValidationError("unknown split in report: " + split);
    DatasetResult d;
    d.name = report.cell(r, "dataset");
    d.ood = split == "ood";
    d.samples = size(r, "samples");
    d.counts.ref_len = size(r, "ref_words");
    d.counts.substitutions = size(r, "substitutions");
    d.counts.deletions = size(r, "deletions");
    d.counts.insertions = size(r, "insertions");
    d.rates = rates;
    d.dup5 = size(r, "dup5");
    d.audio_seconds = report.number(r, "audio_seconds");
    d.wall_seconds = report.number(r, "wall_seconds");
    run.datasets.push_back(d);
  }
  return run;
}

std::string hypotheses_jsonl(const std::vector<Hypothesis>& hyps) {
  std::string out;
  for (const auto& h : hyps) {
    nlohmann::ordered_json j;
    j["dataset"] = h.dataset;
    j["id"] = h.id;
    j["reference"] = h.reference;
    j["hypothesis"] = h.hypothesis;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<Hypothesis> read_hypotheses(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<Hypothesis> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.at("dataset").get<std::string>(), j.at("id").get<std::string>(),
                   j.at("reference").get<std::string>(), j.at("hypothesis").get<std::string>()});
  }
  return out;
}

TrainResult distill(const ModelParams& teacher, const std::vector<TrainingExample>& corpus, const RunConfig& config) {
  config.validate();
  const int enc = config.student_enc_layers == 0 ? teacher.config.enc_layers : config.student_enc_layers;
  ModelParams student = init_student(teacher, config.student_dec_layers, enc);
  return train(std::move(student), &teacher, corpus, config.train, config.weights);
}

TrainResult train_teacher(const ModelConfig& model, const std::vector<TrainingExample>& corpus,
                          const TrainConfig& config) {
  TrainConfig c = config;
  c.freeze_encoder = false;
  const LossWeights weights{0.0, 1.0, 0.0, 1.0};
  return train(init_params(model, derive_seed(config.seed, "init")), nullptr, corpus, c, weights);
}

std::vector<LatencyRow> specdec_bench(const ModelParams& main, const ModelParams& assistant,
                                      const std::vector<FeatureSequence>& inputs, const std::vector<int>& batch_sizes,
                                      int gamma, const DecodeConfig& decode, int reps) {
  if (reps < 5) throw ValidationError("latency needs at least 5 repetitions");
  if (inputs.empty()) throw ValidationError("no inputs to benchmark");
  double audio = 0.0;
  for (const auto& f : inputs) audio += f.seconds();

  std::vector<TokenSequence> reference;
  auto run_main = [&] {
    std::vector<TokenSequence> out;
    for (const auto& f : inputs) out.push_back(greedy_decode(main, f, decode));
    return out;
  };
  std::vector<LatencyRow> rows;
  for (int b : batch_sizes) {
    if (b < 1) throw ValidationError("batch sizes must be positive");
    LatencyRow row;
    row.batch_size = b;
    row.audio_seconds = audio;
    auto run_spec = [&](SpecDecodeStats* stats) {
      std::vector<TokenSequence> out;
      for (std::size_t i = 0; i < inputs.size(); i += static_cast<std::size_t>(b)) {
        const std::size_t n = std::min(inputs.size() - i, static_cast<std::size_t>(b));
        auto part = batched_speculative_decode(main, assistant, std::span(inputs).subspan(i, n), gamma, decode, stats);
        for (auto& t : part) out.push_back(std::move(t));
      }
      return out;
    };
    reference = run_main();
    const auto outputs = run_spec(&row.stats);
    row.identical = outputs == reference;
    std::vector<double> main_t, spec_t;
    for (int r = 0; r < reps; ++r) {
      auto start = Clock::now();
      run_main();
      main_t.push_back(seconds_since(start));
      start = Clock::now();
      run_spec(nullptr);
      spec_t.push_back(seconds_since(start));
    }
    row.main_seconds = median(main_t);
    row.spec_seconds = median(spec_t);
    rows.push_back(row);
  }
  return rows;
}

Report latency_report(const std::vector<LatencyRow>& rows, const std::string& baseline) {
  Report report;
  report.kind = "specdec-bench";
  report.meta.emplace_back("baseline", baseline);
  report.columns = {"batch_size", "main_seconds", "spec_seconds", "relative_latency", "rtf_main", "rtf_spec",
                    "audio_seconds", "candidate_rounds", "candidates_proposed", "candidates_accepted",
                    "acceptance_rate", "identical"};
  for (const auto& r : rows) {
    report.add_row({fmt(r.batch_size), fmt(r.main_seconds), fmt(r.spec_seconds), fmt(r.relative_latency()),
                    fmt(r.rtf_main()), fmt(r.rtf_spec()), fmt(r.audio_seconds),
                    fmt(static_cast<std::size_t>(r.stats.candidate_rounds)),
                    fmt(static_cast<std::size_t>(r.stats.candidates_proposed)),
                    fmt(static_cast<std::size_t>(r.stats.candidates_accepted)), fmt(r.stats.acceptance_rate()),
                    fmt(r.identical)});
  }
  return report;
}

std::vector<NoisePoint> noise_sweep(const std::vector<std::pair<std::string, const ModelParams*>>& models,
                                    const EvalSet& set, const std::vector<double>& snr_grid, const NoiseSpec& noise,
                                    const EvalOptions& options) {
  std::vector<NoisePoint> out;
  for (const auto& [name, model] : models) {
    for (double snr : snr_grid) {
      EvalOptions o = options;
      o.noise = noise;
      o.noise.snr_db = snr;
      out.push_back({name, snr, evaluate(*model, nullptr, {set}, o).datasets.at(0)});
    }
  }
  return out;
}

Report noise_report(const std::vector<NoisePoint>& points, const std::string& noise_kind) {
  Report report;
  report.kind = "noise-sweep";
  report.meta.emplace_back("noise", noise_kind);
  report.columns = {"model", "dataset", "snr_db", "wer", "ier", "ser", "der", "dup5"};
  for (const auto& p : points) {
    const auto& d = p.result;
    report.add_row({p.model, d.name, fmt(p.snr_db), fmt(d.rates.wer), fmt(d.rates.ier), fmt(d.rates.ser),
                    fmt(d.rates.der), fmt(d.dup5)});
  }
  return report;
}

SweepKind parse_sweep_kind(const std::string& name) {
  if (name == "threshold") return SweepKind::threshold;
  if (name == "data_scaling" || name == "data-scaling") return SweepKind::data_scaling;
  if (name == "model_size" || name == "model-size") return SweepKind::model_size;
  throw ValidationError("unknown sweep kind: " + name);
}

std::string to_string(SweepKind kind) {
  switch (kind) {
    case SweepKind::threshold: return "threshold";
    case SweepKind::data_scaling: return "data_scaling";
    case SweepKind::model_size: return "model_size";
  }
  return "threshold";
}

std::vector<SweepPoint> run_sweep(const SweepInputs& in) {
  if (in.teacher == nullptr) throw ValidationError("sweep needs a teacher");
  if (in.grid.empty()) throw ValidationError("empty sweep grid");
  in.base.validate();
  const ModelParams& teacher = *in.teacher;
  const Vocabulary vocab(teacher.config.vocab);
  const std::vector<TrainingExample> examples = training_examples(in.train, in.train_context, vocab, in.jobs);

  auto kept_at = [&](double lambda) {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < in.train.size(); ++i) {
      if (within_threshold(in.train[i].pl_wer, lambda)) kept.push_back(i);
    }
    return kept;
  };

  std::vector<SweepPoint> points;
  for (const std::string& point : in.grid) {
    RunConfig config = in.base;
    std::vector<std::size_t> chosen;
    double filtered = 0.0;
    switch (in.kind) {
      case SweepKind::threshold: {
        config.lambda = to_double("lambda", point);
        chosen = kept_at(config.lambda);
        break;
      }
      case SweepKind::data_scaling: {
        chosen = subsample(kept_at(config.lambda), to_double("fraction", point), config.train.seed);
        break;
      }
      case SweepKind::model_size: {
        const auto parts = split_list(point, '-');
        if (parts.size() != 2) throw ValidationError("model size points look like E-D, got " + point);
        config.student_enc_layers = to_int("enc_layers", parts[0]);
        config.student_dec_layers = to_int("dec_layers", parts[1]);
        config.train.freeze_encoder = config.student_enc_layers == teacher.config.enc_layers;
        chosen = kept_at(config.lambda);
        break;
      }
    }
    if (!in.train.empty()) filtered = 1.0 - static_cast<double>(kept_at(config.lambda).size()) / in.train.size();
    if (chosen.empty()) throw ValidationError("sweep point " + point + " leaves no training data");
    std::vector<TrainingExample> subset;
    for (std::size_t i : chosen) subset.push_back(examples[i]);

    SweepPoint p;
    p.point = point;
    p.train_samples = subset.size();
    p.fraction_filtered = filtered;
    p.student = distill(teacher, subset, config).model;
    p.enc_layers = p.student.config.enc_layers;
    p.dec_layers = p.student.config.dec_layers;
    p.report = evaluate(p.student, nullptr, in.eval, in.eval_options);
    p.report.config = config.items();
    points.push_back(std::move(p));
  }
  return points;
}

Report sweep_report(SweepKind kind, const std::vector<SweepPoint>& points) {
  Report report;
  report.kind = "sweep";
  report.meta.emplace_back("sweep", to_string(kind));
  report.columns = {"point", "enc_layers", "dec_layers", "train_samples", "fraction_filtered", "parameters"};
  std::vector<std::string> datasets;
  if (!points.empty()) {
    for (const auto& d : points.front().report.datasets) {
      datasets.push_back(d.name);
      report.columns.push_back("wer:" + d.name);
    }
    for (const auto& a : points.front().report.aggregates) report.columns.push_back("wer:" + a.name);
  }
  for (const auto& p : points) {
    std::vector<std::string> row{p.point, fmt(p.enc_layers), fmt(p.dec_layers), fmt(p.train_samples),
                                 fmt(p.fraction_filtered), fmt(parameter_count(p.student))};
    for (const auto& d : p.report.datasets) row.push_back(fmt(d.rates.wer));
    for (const auto& a : p.report.aggregates) row.push_back(fmt(a.rates.wer));
    report.add_row(std::move(row));
  }
  return report;
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace dwtk
