#include "dwtk/corpus.hpp"

#include "dwtk/checkpoint.hpp"
#include "dwtk/metrics.hpp"
#include "dwtk/parallel.hpp"
#include "dwtk/wav.hpp"

#include <json.hpp>

#include <filesystem>
#include <set>
#include <sstream>

namespace dwtk {
namespace {

using Json = nlohmann::ordered_json;

Sample parse_sample(const Json& j) {
  if (!j.is_object()) throw ValidationError("record is not an object");
  Sample s;
  s.id = j.at("id").get<std::string>();
  s.text = j.at("text").get<std::string>();
  const bool has_features = j.contains("features");
  const bool has_task = j.contains("task");
  if (has_features == has_task) throw ValidationError("record needs exactly one of features or task");
  if (has_features) {
    s.source = j.at("features").get<std::string>();
  } else {
    const Json& t = j.at("task");
    TaskSource task;
    task.kind = parse_task_kind(t.at("kind").get<std::string>());
    task.seed = t.at("seed").get<std::uint64_t>();
    task.length = t.at("len").get<int>();
    if (task.length < 1) throw ValidationError("task length must be positive");
    s.source = task;
  }
  return s;
}

Json sample_json(const Sample& s) {
  Json j;
  j["id"] = s.id;
  j["text"] = s.text;
  if (const auto* path = std::get_if<std::string>(&s.source)) {
    j["features"] = *path;
  } else {
    const auto& t = std::get<TaskSource>(s.source);
    j["task"] = Json{{"kind", to_string(t.kind)}, {"seed", t.seed}, {"len", t.length}};
  }
  return j;
}

template <typename T, typename Parse>
std::vector<T> read_jsonl(const std::string& path, Parse parse) {
  std::istringstream in(read_file(path));
  std::vector<T> out;
  std::set<std::string> ids;
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(Json::parse(line)));
    } catch (const std::exception& e) {
      throw ValidationError(path + ":" + std::to_string(number) + ": " + e.what());
    }
    const std::string& id = [&]() -> const std::string& {
      if constexpr (std::is_same_v<T, Sample>) return out.back().id;
      else return out.back().sample.id;
    }();
    if (!ids.insert(id).second) throw ValidationError(path + ":" + std::to_string(number) + ": duplicate id " + id);
  }
  return out;
}

}  // namespace

FeatureSequence load_features(const Sample& sample, const CorpusContext& context) {
  if (const auto* task = std::get_if<TaskSource>(&sample.source)) {
    return synth_task(task->kind, task->seed, task->length, context.synth).features;
  }
  std::filesystem::path path(std::get<std::string>(sample.source));
  if (path.is_relative()) path = std::filesystem::path(context.base_dir) / path;
  const Waveform w = read_wav(path.string());
  if (std::abs(w.sample_rate - context.front_end.sample_rate()) > 1e-9) {
    throw ValidationError(path.string() + ": sample rate does not match the front end");
  }
  return analyze(w, context.front_end);
}

std::vector<Sample> read_manifest(const std::string& path) {
  return read_jsonl<Sample>(path, parse_sample);
}

std::vector<PseudoSample> read_pseudo_manifest(const std::string& path) {
  return read_jsonl<PseudoSample>(path, [](const Json& j) {
    PseudoSample p;
    p.sample = parse_sample(j);
    p.pseudo_text = j.at("pseudo_text").get<std::string>();
    p.pl_wer = j.at("pl_wer").get<double>();
    p.truncated = j.value("truncated", false);
    if (!(p.pl_wer >= 0)) throw ValidationError("pl_wer must be non-negative");
    return p;
  });
}

std::string manifest_jsonl(const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) out += sample_json(s).dump() + "\n";
  return out;
}

std::string manifest_jsonl(const std::vector<PseudoSample>& samples) {
  std::string out;
  for (const auto& p : samples) {
    Json j = sample_json(p.sample);
    j["pseudo_text"] = p.pseudo_text;
    j["pl_wer"] = p.pl_wer;
    j["truncated"] = p.truncated;
    out += j.dump() + "\n";
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<Sample>& samples) {
  write_file_atomic(path, manifest_jsonl(samples));
}

void write_manifest(const std::string& path, const std::vector<PseudoSample>& samples) {
  write_file_atomic(path, manifest_jsonl(samples));
}

std::string manifest_dir(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  return parent.empty() ? "." : parent.string();
}

double pseudo_label_wer(const std::string& text, const std::string& pseudo_text) {
  return error_rates(align(normalize(text), normalize(pseudo_text))).wer;
}

std::vector<PseudoSample> pseudo_label(const Transcriber& transcriber, const std::vector<Sample>& corpus,
                                       const CorpusContext& context, const Vocabulary& vocab, Token eos_token,
                                       int jobs) {
  std::vector<PseudoSample> out(corpus.size());
  parallel_for(corpus.size(), jobs, [&](std::size_t i) {
    const Sample& s = corpus[i];
    try {
      const TokenSequence tokens = transcriber(load_features(s, context));
      PseudoSample& p = out[i];
      p.sample = s;
      p.truncated = std::find(tokens.begin(), tokens.end(), eos_token) == tokens.end();
      TokenSequence words;
      for (Token t : tokens) {
        if (t == eos_token) break;
        if (t >= kFirstWordToken) words.push_back(t);
      }
      p.pseudo_text = vocab.detokenize(words);
      p.pl_wer = pseudo_label_wer(s.text, p.pseudo_text);
    } catch (const ValidationError& e) {
      throw ValidationError("sample " + s.id + ": " + e.what());
    }
  });
  return out;
}

std::vector<PseudoSample> pseudo_label(const ModelParams& model, const std::vector<Sample>& corpus,
                                       const DecodeConfig& config, const CorpusContext& context, int jobs) {
  const Vocabulary vocab(model.config.vocab);
  return pseudo_label(make_transcriber(model, nullptr, config), corpus, context, vocab, config.eos_token, jobs);
}

bool within_threshold(double pl_wer, double lambda) {
  // pl_wer is a ratio of word counts, so a label sitting exactly on the
  // threshold can land an ulp above it after scaling.
  return 100.0 * pl_wer - lambda <= 1e-9;
}

FilterResult filter_by_wer(const std::vector<PseudoSample>& corpus, double lambda, bool verify) {
  if (!(lambda >= 0)) throw ValidationError("lambda must be non-negative");
  FilterResult result;
  result.report.lambda = lambda;
  for (const auto& p : corpus) {
    if (verify) {
      const double recomputed = pseudo_label_wer(p.sample.text, p.pseudo_text);
      if (std::abs(recomputed - p.pl_wer) > 1e-12) {
        throw ValidationError("sample " + p.sample.id + ": stored pl_wer does not match its texts");
      }
    }
    if (within_threshold(p.pl_wer, lambda)) {
      ++result.report.kept;
      result.kept.push_back(p);
    } else {
      ++result.report.dropped;
    }
  }
  return result;
}

std::vector<TrainingExample> training_examples(const std::vector<PseudoSample>& corpus, const CorpusContext& context,
                                               const Vocabulary& vocab, int jobs) {
  std::vector<TrainingExample> out(corpus.size());
  parallel_for(corpus.size(), jobs, [&](std::size_t i) {
    const PseudoSample& p = corpus[i];
    out[i] = {load_features(p.sample, context), vocab.tokenize(p.pseudo_text), vocab.tokenize(p.sample.text)};
  });
  return out;
}

std::vector<TrainingExample> training_examples(const std::vector<Sample>& corpus, const CorpusContext& context,
                                               const Vocabulary& vocab, int jobs) {
  std::vector<TrainingExample> out(corpus.size());
  parallel_for(corpus.size(), jobs, [&](std::size_t i) {
    const TokenSequence t = vocab.tokenize(corpus[i].text);
    out[i] = {load_features(corpus[i], context), t, t};
  });
  return out;
}

}  // namespace dwtk
