// distilkit: command-line front end for the toolkit.

#include "dwtk/checkpoint.hpp"
#include "dwtk/harness.hpp"
#include "dwtk/wav.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

using namespace dwtk;

namespace {

/// Flags mirroring every RunConfig key, layered over an optional file.
struct ConfigFlags {
  std::string file;
  std::vector<std::pair<std::string, CLI::Option*>> options;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "flat key = value config file");
    for (const auto& [key, value] : RunConfig{}.items()) {
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      options.emplace_back(key, app->add_option(flag, values[key], "config key " + key));
    }
  }

  RunConfig resolve() const {
    RunConfig config;
    if (!file.empty()) config = parse_run_config(read_file(file));
    for (const auto& [key, option] : options) {
      if (option->count() > 0) config.set(key, values.at(key));
    }
    config.validate();
    return config;
  }
};

struct ContextFlags {
  double jitter = SynthConfig{}.jitter;
  void attach(CLI::App* app) { app->add_option("--jitter", jitter, "synthetic task jitter"); }

  CorpusContext make(const std::string& manifest, const ModelConfig& model) const {
    CorpusContext c;
    c.base_dir = manifest_dir(manifest);
    c.synth.vocab = model.vocab;
    c.synth.input_dim = model.input_dim;
    c.synth.jitter = jitter;
    c.front_end.input_dim = model.input_dim;
    return c;
  }
};

/// "name=path" or "path" (name taken from the file stem).
std::pair<std::string, std::string> named_path(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq != std::string::npos) return {spec.substr(0, eq), spec.substr(eq + 1)};
  return {std::filesystem::path(spec).stem().string(), spec};
}

std::vector<EvalSet> eval_sets(const std::vector<std::string>& id, const std::vector<std::string>& ood,
                               const ModelConfig& model, const ContextFlags& ctx) {
  std::vector<EvalSet> sets;
  for (int split = 0; split < 2; ++split) {
    for (const auto& spec : split == 0 ? id : ood) {
      const auto [name, path] = named_path(spec);
      sets.push_back({name, split == 1, read_manifest(path), ctx.make(path, model)});
    }
  }
  if (sets.empty()) throw ValidationError("no evaluation manifests given");
  return sets;
}

EvalOptions eval_options(const RunConfig& config, const std::string& mode) {
  EvalOptions o;
  o.mode = parse_eval_mode(mode);
  o.decode = config.decode;
  o.chunk_seconds = config.chunk_seconds;
  o.overlap_seconds = config.overlap_seconds;
  o.jobs = config.train.jobs;
  return o;
}

NoiseSource noise_source(const std::string& kind, const std::string& file) {
  switch (parse_noise_kind(kind)) {
    case NoiseSource::Kind::white: return NoiseSource::white();
    case NoiseSource::Kind::babble: return NoiseSource::babble();
    case NoiseSource::Kind::file:
      if (file.empty()) throw ValidationError("--noise file needs --noise-file");
      return NoiseSource::from_samples(read_wav(file).samples);
  }
  return NoiseSource::white();
}

double parse_snr(const std::string& text) {
  if (text == "clean" || text == "inf") return kNoNoise;
  return parse_number(text);
}

void print(const Report& report) { std::cout << render_text(report); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distilkit: sequence-level distillation toolkit for toy speech models"};
  app.require_subcommand(1);

  // make-corpus
  auto* make = app.add_subcommand("make-corpus", "write a synthetic task manifest");
  std::string make_task = "copy", make_out, make_prefix = "utt", make_wav_dir;
  int make_count = 64, make_min = 4, make_max = 16, make_vocab = 64, make_input_dim = 16;
  std::uint64_t make_seed = 0;
  double make_jitter = SynthConfig{}.jitter;
  make->add_option("--task", make_task, "copy | reverse | mapped");
  make->add_option("--count", make_count, "number of samples");
  make->add_option("--min-len", make_min, "shortest transcript");
  make->add_option("--max-len", make_max, "longest transcript");
  make->add_option("--seed", make_seed, "corpus seed");
  make->add_option("--vocab", make_vocab, "vocabulary size");
  make->add_option("--input-dim", make_input_dim, "feature width");
  make->add_option("--jitter", make_jitter, "jitter used when rendering WAV files");
  make->add_option("--prefix", make_prefix, "id prefix");
  make->add_option("--wav-dir", make_wav_dir, "render WAV files here and reference them instead of task seeds");
  make->add_option("--out", make_out, "output manifest")->required();

  // train-teacher
  auto* teach = app.add_subcommand("train-teacher", "train a model on ground-truth transcripts");
  ConfigFlags teach_flags;
  ContextFlags teach_ctx;
  ModelConfig teach_model;
  std::string teach_train, teach_out, teach_log;
  teach_flags.attach(teach);
  teach_ctx.attach(teach);
  teach->add_option("--train", teach_train, "training manifest")->required();
  teach->add_option("--out", teach_out, "checkpoint to write")->required();
  teach->add_option("--loss-log", teach_log, "loss log CSV");
  teach->add_option("--enc-layers", teach_model.enc_layers);
  teach->add_option("--dec-layers", teach_model.dec_layers);
  teach->add_option("--width", teach_model.width);
  teach->add_option("--heads", teach_model.heads);
  teach->add_option("--vocab", teach_model.vocab);
  teach->add_option("--ffn-width", teach_model.ffn_width);
  teach->add_option("--input-dim", teach_model.input_dim);
  teach->add_option("--max-positions", teach_model.max_positions);
  teach->add_option("--max-source-positions", teach_model.max_source_positions);

  // pseudo-label
  auto* pl = app.add_subcommand("pseudo-label", "transcribe a manifest with a teacher");
  ConfigFlags pl_flags;
  ContextFlags pl_ctx;
  std::string pl_in, pl_model, pl_out;
  pl_flags.attach(pl);
  pl_ctx.attach(pl);
  pl->add_option("--manifest", pl_in, "input manifest")->required();
  pl->add_option("--model", pl_model, "teacher checkpoint")->required();
  pl->add_option("--out", pl_out, "pseudo-labelled manifest")->required();

  // filter
  auto* filt = app.add_subcommand("filter", "drop pseudo-labels above a WER threshold");
  std::string filt_in, filt_out, filt_report;
  double filt_lambda = 10.0;
  bool filt_verify = false;
  filt->add_option("--manifest", filt_in, "pseudo-labelled manifest")->required();
  filt->add_option("--lambda", filt_lambda, "WER threshold in percent");
  filt->add_option("--out", filt_out, "kept samples")->required();
  filt->add_option("--report", filt_report, "filter report CSV");
  filt->add_flag("--verify", filt_verify, "recompute every pl_wer");

  // distill
  auto* dist = app.add_subcommand("distill", "initialise a student from a teacher and train it");
  ConfigFlags dist_flags;
  ContextFlags dist_ctx;
  std::string dist_train, dist_teacher, dist_out, dist_log, dist_echo;
  dist_flags.attach(dist);
  dist_ctx.attach(dist);
  dist->add_option("--train", dist_train, "pseudo-labelled manifest")->required();
  dist->add_option("--teacher", dist_teacher, "teacher checkpoint")->required();
  dist->add_option("--out", dist_out, "student checkpoint")->required();
  dist->add_option("--loss-log", dist_log, "loss log CSV");
  dist->add_option("--config-echo", dist_echo, "resolved config (default: <out>.config)");

  // eval
  auto* ev = app.add_subcommand("eval", "transcribe and score manifests");
  ConfigFlags ev_flags;
  ContextFlags ev_ctx;
  std::vector<std::string> ev_id, ev_ood;
  std::string ev_model, ev_assistant, ev_mode = "short", ev_report, ev_hyps, ev_noise = "white", ev_noise_file,
                                      ev_snr = "clean";
  ev_flags.attach(ev);
  ev_ctx.attach(ev);
  ev->add_option("--manifest", ev_id, "in-distribution manifest, [name=]path");
  ev->add_option("--ood-manifest", ev_ood, "out-of-distribution manifest, [name=]path");
  ev->add_option("--model", ev_model, "checkpoint")->required();
  ev->add_option("--assistant", ev_assistant, "assistant checkpoint for speculative decoding");
  ev->add_option("--mode", ev_mode, "short | long");
  ev->add_option("--report", ev_report, "report CSV (JSON mirror alongside)");
  ev->add_option("--hyps", ev_hyps, "hypothesis dump (JSON Lines)");
  ev->add_option("--noise", ev_noise, "white | babble | file");
  ev->add_option("--noise-file", ev_noise_file, "noise WAV for --noise file");
  ev->add_option("--snr", ev_snr, "SNR in dB, or clean");

  // specdec-bench
  auto* bench = app.add_subcommand("specdec-bench", "time speculative against greedy decoding");
  ConfigFlags bench_flags;
  ContextFlags bench_ctx;
  std::string bench_main, bench_assistant, bench_manifest, bench_report, bench_sizes = "1,4,16";
  int bench_reps = 5;
  bench_flags.attach(bench);
  bench_ctx.attach(bench);
  bench->add_option("--main", bench_main, "main checkpoint")->required();
  bench->add_option("--assistant", bench_assistant, "assistant checkpoint")->required();
  bench->add_option("--manifest", bench_manifest, "inputs")->required();
  bench->add_option("--batch-sizes", bench_sizes, "comma-separated batch sizes");
  bench->add_option("--reps", bench_reps, "timed repetitions (at least 5)");
  bench->add_option("--report", bench_report, "report CSV");

  // noise-sweep
  auto* noise = app.add_subcommand("noise-sweep", "WER against SNR");
  ConfigFlags noise_flags;
  ContextFlags noise_ctx;
  std::vector<std::string> noise_models;
  std::string noise_manifest, noise_grid = "clean,40,30,20,10,0,-10", noise_kind = "white", noise_file,
                              noise_report_path;
  std::uint64_t noise_seed = 0;
  noise_flags.attach(noise);
  noise_ctx.attach(noise);
  noise->add_option("--manifest", noise_manifest, "inputs")->required();
  noise->add_option("--model", noise_models, "[name=]checkpoint, repeatable")->required();
  noise->add_option("--snr-grid", noise_grid, "comma-separated SNRs in dB; clean for no noise");
  noise->add_option("--noise", noise_kind, "white | babble | file");
  noise->add_option("--noise-file", noise_file, "noise WAV for --noise file");
  noise->add_option("--noise-seed", noise_seed, "noise seed (default: --seed)");
  noise->add_option("--report", noise_report_path, "report CSV");

  // sweep
  auto* sw = app.add_subcommand("sweep", "threshold, data-scaling or model-size sweep");
  ConfigFlags sw_flags;
  ContextFlags sw_ctx;
  std::string sw_kind = "threshold", sw_grid, sw_train, sw_teacher, sw_report, sw_out_dir, sw_mode = "short";
  std::vector<std::string> sw_id, sw_ood;
  sw_flags.attach(sw);
  sw_ctx.attach(sw);
  sw->add_option("--kind", sw_kind, "threshold | data_scaling | model_size");
  sw->add_option("--grid", sw_grid, "comma-separated points")->required();
  sw->add_option("--train", sw_train, "pseudo-labelled manifest")->required();
  sw->add_option("--teacher", sw_teacher, "teacher checkpoint")->required();
  sw->add_option("--eval-manifest", sw_id, "in-distribution manifest, [name=]path")->required();
  sw->add_option("--ood-manifest", sw_ood, "out-of-distribution manifest, [name=]path");
  sw->add_option("--mode", sw_mode, "short | long");
  sw->add_option("--report", sw_report, "summary CSV")->required();
  sw->add_option("--out-dir", sw_out_dir, "per-point reports and checkpoints");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*make) {
      const TaskKind kind = parse_task_kind(make_task);
      if (make_count < 0 || make_min < 1 || make_max < make_min) throw ValidationError("invalid corpus size or lengths");
      const Vocabulary vocab(make_vocab);
      SynthConfig synth;
      synth.vocab = make_vocab;
      synth.input_dim = make_input_dim;
      synth.jitter = make_jitter;
      FrontEnd front;
      front.input_dim = make_input_dim;
      Rng rng(derive_seed(make_seed, "corpus"));
      if (!make_wav_dir.empty()) std::filesystem::create_directories(make_wav_dir);
      std::vector<Sample> samples;
      for (int i = 0; i < make_count; ++i) {
        const int len = make_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(make_max - make_min + 1)));
        const std::uint64_t seed = rng.next();
        const SynthSample s = synth_task(kind, seed, len, synth);
        Sample sample{make_prefix + "-" + std::to_string(i), vocab.detokenize(s.transcript), TaskSource{kind, seed, len}};
        if (!make_wav_dir.empty()) {
          const auto wav = std::filesystem::path(make_wav_dir) / (sample.id + ".wav");
          write_wav(wav.string(), synthesize(s.features, front));
          sample.source = std::filesystem::relative(wav, std::filesystem::path(manifest_dir(make_out))).string();
        }
        samples.push_back(sample);
      }
      write_manifest(make_out, samples);
      std::cout << "wrote " << samples.size() << " samples to " << make_out << "\n";
    } else if (*teach) {
      const RunConfig config = teach_flags.resolve();
      teach_model.validate();
      const auto samples = read_manifest(teach_train);
      const auto examples = training_examples(samples, teach_ctx.make(teach_train, teach_model),
                                              Vocabulary(teach_model.vocab), config.train.jobs);
      const TrainResult r = train_teacher(teach_model, examples, config.train);
      save_checkpoint(teach_out, r.model);
      if (!teach_log.empty()) write_file_atomic(teach_log, loss_log_csv(r.log));
      std::cout << "final loss " << format_number(r.log.back().loss.total) << "\n";
    } else if (*pl) {
      const RunConfig config = pl_flags.resolve();
      const ModelParams model = load_checkpoint(pl_model);
      const auto samples = read_manifest(pl_in);
      const auto out = pseudo_label(model, samples, config.decode, pl_ctx.make(pl_in, model.config), config.train.jobs);
      write_manifest(pl_out, out);
      std::size_t truncated = 0;
      for (const auto& p : out) truncated += p.truncated;
      std::cout << "labelled " << out.size() << " samples (" << truncated << " truncated)\n";
    } else if (*filt) {
      const auto corpus = read_pseudo_manifest(filt_in);
      const FilterResult r = filter_by_wer(corpus, filt_lambda, filt_verify);
      write_manifest(filt_out, r.kept);
      Report report;
      report.kind = "filter";
      report.columns = {"lambda", "kept", "dropped", "fraction_filtered"};
      report.add_row({format_number(r.report.lambda), format_number(static_cast<long long>(r.report.kept)),
                      format_number(static_cast<long long>(r.report.dropped)),
                      format_number(r.report.fraction_filtered())});
      if (!filt_report.empty()) write_report(filt_report, report);
      print(report);
    } else if (*dist) {
      const RunConfig config = dist_flags.resolve();
      const ModelParams teacher = load_checkpoint(dist_teacher);
      const auto corpus = read_pseudo_manifest(dist_train);
      const auto examples = training_examples(corpus, dist_ctx.make(dist_train, teacher.config),
                                              Vocabulary(teacher.config.vocab), config.train.jobs);
      const TrainResult r = distill(teacher, examples, config);
      save_checkpoint(dist_out, r.model);
      write_file_atomic(dist_echo.empty() ? dist_out + ".config" : dist_echo, to_text(config));
      if (!dist_log.empty()) write_file_atomic(dist_log, loss_log_csv(r.log));
      std::cout << "initial loss " << format_number(r.log.front().loss.total) << ", final loss "
                << format_number(r.log.back().loss.total) << "\n";
    } else if (*ev) {
      const RunConfig config = ev_flags.resolve();
      const ModelParams model = load_checkpoint(ev_model);
      std::optional<ModelParams> assistant;
      if (!ev_assistant.empty()) assistant = load_checkpoint(ev_assistant);
      EvalOptions options = eval_options(config, ev_mode);
      options.noise = {noise_source(ev_noise, ev_noise_file), parse_snr(ev_snr), config.train.seed};
      std::vector<Hypothesis> hyps;
      RunReport run = evaluate(model, assistant ? &*assistant : nullptr, eval_sets(ev_id, ev_ood, model.config, ev_ctx),
                               options, &hyps);
      run.config = config.items();
      const Report report = to_report(run);
      if (!ev_report.empty()) write_report(ev_report, report);
      if (!ev_hyps.empty()) write_file_atomic(ev_hyps, hypotheses_jsonl(hyps));
      print(report);
    } else if (*bench) {
      const RunConfig config = bench_flags.resolve();
      const ModelParams main_model = load_checkpoint(bench_main);
      const ModelParams assistant = load_checkpoint(bench_assistant);
      const auto samples = read_manifest(bench_manifest);
      const CorpusContext ctx = bench_ctx.make(bench_manifest, main_model.config);
      std::vector<FeatureSequence> inputs;
      for (const auto& s : samples) inputs.push_back(load_features(s, ctx));
      std::vector<int> sizes;
      for (const auto& s : split_list(bench_sizes)) sizes.push_back(static_cast<int>(parse_number(s)));
      const auto rows = specdec_bench(main_model, assistant, inputs, sizes, config.decode.gamma, config.decode, bench_reps);
      const Report report = latency_report(rows, "greedy:" + bench_main);
      if (!bench_report.empty()) write_report(bench_report, report);
      print(report);
      for (const auto& r : rows) {
        if (!r.identical) throw RuntimeError("speculative output differs from greedy at batch size " +
                                             std::to_string(r.batch_size));
      }
    } else if (*noise) {
      const RunConfig config = noise_flags.resolve();
      std::vector<ModelParams> models;
      std::vector<std::string> names;
      for (const auto& spec : noise_models) {
        const auto [name, path] = named_path(spec);
        names.push_back(name);
        models.push_back(load_checkpoint(path));
      }
      std::vector<std::pair<std::string, const ModelParams*>> named;
      for (std::size_t i = 0; i < models.size(); ++i) named.emplace_back(names[i], &models[i]);
      std::vector<double> grid;
      for (const auto& s : split_list(noise_grid)) grid.push_back(parse_snr(s));
      const auto [set_name, set_path] = named_path(noise_manifest);
      const EvalSet set{set_name, false, read_manifest(set_path), noise_ctx.make(set_path, models.front().config)};
      const NoiseSpec spec{noise_source(noise_kind, noise_file), kNoNoise,
                           noise->count("--noise-seed") ? noise_seed : config.train.seed};
      const Report report = noise_report(noise_sweep(named, set, grid, spec, eval_options(config, "short")), noise_kind);
      if (!noise_report_path.empty()) write_report(noise_report_path, report);
      print(report);
    } else if (*sw) {
      const RunConfig config = sw_flags.resolve();
      const ModelParams teacher = load_checkpoint(sw_teacher);
      SweepInputs in;
      in.kind = parse_sweep_kind(sw_kind);
      in.grid = split_list(sw_grid);
      in.base = config;
      in.teacher = &teacher;
      in.train = read_pseudo_manifest(sw_train);
      in.train_context = sw_ctx.make(sw_train, teacher.config);
      in.eval = eval_sets(sw_id, sw_ood, teacher.config, sw_ctx);
      in.eval_options = eval_options(config, sw_mode);
      in.jobs = config.train.jobs;
      const auto points = run_sweep(in);
      if (!sw_out_dir.empty()) {
        std::filesystem::create_directories(sw_out_dir);
        for (const auto& p : points) {
          const auto base = std::filesystem::path(sw_out_dir) / ("point_" + p.point);
          write_report(base.string() + ".csv", to_report(p.report));
          save_checkpoint(base.string() + ".dwtk", p.student);
        }
      }
      const Report report = sweep_report(in.kind, points);
      write_report(sw_report, report);
      print(report);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
