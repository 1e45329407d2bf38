#include "dwtk/checkpoint.hpp"
#include "dwtk/corpus.hpp"
#include "dwtk/wav.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>

using namespace dwtk;

namespace {

std::vector<Sample> copy_corpus(std::size_t n, const SynthConfig& sc, std::uint64_t seed = 0) {
  const Vocabulary vocab(sc.vocab);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const TaskSource task{TaskKind::copy, seed + i, 3 + static_cast<int>(i % 6)};
    out.push_back({"s" + std::to_string(i), vocab.detokenize(synth_task(task.kind, task.seed, task.length, sc).transcript), task});
  }
  return out;
}

Transcriber oracle_for(const SynthConfig& sc) {
  return [sc](const FeatureSequence& f) {
    TokenSequence t = nearest_prototype_decode(f, sc);
    t.push_back(kEosToken);
    return t;
  };
}

/// Swaps each word for another with probability `rate`, seeded by the input.
Transcriber corrupting(const SynthConfig& sc, double rate) {
  return [sc, rate](const FeatureSequence& f) {
    std::uint64_t h = 0;
    std::memcpy(&h, f.frames.data(), sizeof h);
    Rng rng(h);
    TokenSequence t = nearest_prototype_decode(f, sc);
    for (auto& v : t) {
      if (rng.uniform() < rate) v = kFirstWordToken + (v - kFirstWordToken + 1) % (sc.vocab - kFirstWordToken);
    }
    t.push_back(kEosToken);
    return t;
  };
}

PseudoSample planted(const std::string& id, double wer) {
  PseudoSample p;
  p.sample.id = id;
  p.sample.text = "ba";
  p.sample.source = TaskSource{};
  p.pl_wer = wer;
  return p;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path) << text;
}

}  // namespace

TEST_CASE("vocabulary round trip") {
  const Vocabulary v(64);
  CHECK(v.size() == 64);
  CHECK(v.word(kBosToken) == "<s>");
  CHECK(v.word(kEosToken) == "</s>");
  for (Token t = kFirstWordToken; t < 64; ++t) {
    CHECK(normalize(v.word(t)) == NormalizedText{v.word(t)});
    CHECK(v.token(v.word(t)) == t);
  }
  const TokenSequence words{2, 9, 63, 2};
  CHECK(v.tokenize(v.detokenize(words)) == words);
  CHECK(v.detokenize({0, 2, 1, 3}) == v.word(2));
  CHECK_THROWS_AS(v.token("zzzzzz"), ValidationError);
  CHECK_THROWS_AS(Vocabulary(1), ValidationError);
}

TEST_CASE("manifest round trip") {
  const std::string dir = testing::temp_dir("manifest");
  std::vector<Sample> samples = copy_corpus(5, SynthConfig{});
  samples.push_back({"wav", "ba be", std::string("audio/x.wav")});
  write_manifest(dir + "/m.jsonl", samples);
  const auto back = read_manifest(dir + "/m.jsonl");
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(back[i].id == samples[i].id);
    CHECK(back[i].text == samples[i].text);
    CHECK(back[i].source == samples[i].source);
  }
  CHECK(manifest_jsonl(back) == manifest_jsonl(samples));
  CHECK(manifest_dir(dir + "/m.jsonl") == dir);
  CHECK(manifest_dir("m.jsonl") == ".");

  std::vector<PseudoSample> pseudo{planted("a", 0.25), planted("b", 0.0)};
  pseudo[0].pseudo_text = "ba be";
  pseudo[0].truncated = true;
  write_manifest(dir + "/p.jsonl", pseudo);
  const auto pback = read_pseudo_manifest(dir + "/p.jsonl");
  REQUIRE(pback.size() == 2);
  CHECK(pback[0].pseudo_text == "ba be");
  CHECK(pback[0].pl_wer == 0.25);
  CHECK(pback[0].truncated);
  CHECK(!pback[1].truncated);
}

TEST_CASE("manifest errors name the line") {
  const std::string dir = testing::temp_dir("manifest_errors");
  const std::string ok = R"({"id":"a","text":"ba","task":{"kind":"copy","seed":1,"len":2}})";
  write_text(dir + "/dup.jsonl", ok + "\n" + ok + "\n");
  CHECK_THROWS_WITH_AS(read_manifest(dir + "/dup.jsonl"), (dir + "/dup.jsonl:2: duplicate id a").c_str(),
                       ValidationError);
  write_text(dir + "/bad.jsonl", ok + "\n\n{not json\n");
  CHECK_THROWS_WITH_AS(read_manifest(dir + "/bad.jsonl"), doctest::Contains(":3: "), ValidationError);
  write_text(dir + "/both.jsonl", R"({"id":"a","text":"ba","features":"x.wav","task":{"kind":"copy","seed":1,"len":2}})");
  CHECK_THROWS_AS(read_manifest(dir + "/both.jsonl"), ValidationError);
  write_text(dir + "/neither.jsonl", R"({"id":"a","text":"ba"})");
  CHECK_THROWS_AS(read_manifest(dir + "/neither.jsonl"), ValidationError);
  write_text(dir + "/kind.jsonl", R"({"id":"a","text":"ba","task":{"kind":"sing","seed":1,"len":2}})");
  CHECK_THROWS_AS(read_manifest(dir + "/kind.jsonl"), ValidationError);
  write_text(dir + "/neg.jsonl", ok.substr(0, ok.size() - 1) + R"(,"pseudo_text":"ba","pl_wer":-1})");
  CHECK_THROWS_AS(read_pseudo_manifest(dir + "/neg.jsonl"), ValidationError);
  CHECK_THROWS_AS(read_pseudo_manifest(dir + "/dup.jsonl"), ValidationError);  // missing pseudo fields
  CHECK_THROWS_AS(read_manifest(dir + "/missing.jsonl"), RuntimeError);
}

TEST_CASE("an exact transcriber yields zero label error") {
  const SynthConfig sc;
  const auto corpus = copy_corpus(50, sc);
  const auto pseudo = pseudo_label(oracle_for(sc), corpus, CorpusContext{}, Vocabulary(sc.vocab));
  REQUIRE(pseudo.size() == corpus.size());
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    CHECK(pseudo[i].sample.id == corpus[i].id);
    CHECK(pseudo[i].pseudo_text == corpus[i].text);
    CHECK(pseudo[i].pl_wer == 0.0);
    CHECK(!pseudo[i].truncated);
  }
  CHECK(filter_by_wer(pseudo, 0.0).report.dropped == 0);
}

TEST_CASE("planted word corruption shows up as label error") {
  const SynthConfig sc;
  const auto corpus = copy_corpus(1200, sc);
  const auto pseudo = pseudo_label(corrupting(sc, 0.1), corpus, CorpusContext{}, Vocabulary(sc.vocab));
  double total = 0.0;
  for (const auto& p : pseudo) total += p.pl_wer;
  CHECK(std::abs(total / static_cast<double>(pseudo.size()) - 0.10) <= 0.02);
}

TEST_CASE("empty transcriptions and truncation") {
  const SynthConfig sc;
  const auto corpus = copy_corpus(3, sc);
  const Transcriber silent = [](const FeatureSequence&) { return TokenSequence{kEosToken}; };
  for (const auto& p : pseudo_label(silent, corpus, CorpusContext{}, Vocabulary(sc.vocab))) {
    CHECK(p.pseudo_text.empty());
    CHECK(p.pl_wer == 1.0);
    CHECK(!p.truncated);
  }
  const Transcriber endless = [](const FeatureSequence&) { return TokenSequence{2, 2, 2}; };
  for (const auto& p : pseudo_label(endless, corpus, CorpusContext{}, Vocabulary(sc.vocab))) CHECK(p.truncated);
  CHECK(pseudo_label(silent, {}, CorpusContext{}, Vocabulary(sc.vocab)).empty());
}

TEST_CASE("filter example") {
  const std::vector<PseudoSample> corpus{planted("a", 0.0), planted("b", 0.05), planted("c", 0.15), planted("d", 0.5)};
  const FilterResult r = filter_by_wer(corpus, 10.0);
  REQUIRE(r.kept.size() == 2);
  CHECK(r.kept[0].sample.id == "a");
  CHECK(r.kept[1].sample.id == "b");
  CHECK(r.report.kept == 2);
  CHECK(r.report.dropped == 2);
  CHECK(r.report.fraction_filtered() == 0.5);
  CHECK(filter_by_wer(corpus, 5.0).report.kept == 2);  // inclusive at the threshold
  CHECK(filter_by_wer({planted("x", 7.0 / 100.0)}, 7.0).report.kept == 1);
  CHECK(filter_by_wer({planted("x", 7.0 / 100.0 + 1e-6)}, 7.0).report.kept == 0);
  CHECK(filter_by_wer({}, 10.0).report.fraction_filtered() == 0.0);
  CHECK_THROWS_AS(filter_by_wer(corpus, -1.0), ValidationError);
}

TEST_CASE("filtering is monotone and nested in lambda") {
  Rng rng(1);
  std::vector<PseudoSample> corpus;
  for (int i = 0; i < 500; ++i) corpus.push_back(planted(std::to_string(i), rng.uniform(0.0, 1.2)));
  const double grid[] = {100, 80, 40, 20, 15, 10, 5};
  std::vector<std::string> previous;
  double previous_fraction = -1.0;
  for (double lambda : grid) {
    const FilterResult r = filter_by_wer(corpus, lambda);
    CHECK(r.report.fraction_filtered() >= previous_fraction);
    previous_fraction = r.report.fraction_filtered();
    std::vector<std::string> ids;
    for (const auto& p : r.kept) ids.push_back(p.sample.id);
    std::sort(ids.begin(), ids.end());
    if (!previous.empty()) CHECK(std::includes(previous.begin(), previous.end(), ids.begin(), ids.end()));
    previous = ids;
  }
}

TEST_CASE("verify recomputes the stored label error") {
  PseudoSample p = planted("a", 0.5);
  p.sample.text = "ba be";
  p.pseudo_text = "ba bi";
  CHECK_NOTHROW(filter_by_wer({p}, 10.0, true));
  p.pl_wer = 0.0;
  CHECK_NOTHROW(filter_by_wer({p}, 10.0, false));
  CHECK_THROWS_AS(filter_by_wer({p}, 10.0, true), ValidationError);
}

TEST_CASE("subsampling") {
  std::vector<int> corpus(100);
  for (int i = 0; i < 100; ++i) corpus[static_cast<std::size_t>(i)] = i;
  const auto half = subsample(corpus, 0.5, 7);
  const auto quarter = subsample(corpus, 0.25, 7);
  CHECK(half.size() == 50);
  CHECK(quarter.size() == 25);
  CHECK(std::is_sorted(half.begin(), half.end()));
  CHECK(std::includes(half.begin(), half.end(), quarter.begin(), quarter.end()));
  CHECK(subsample(corpus, 1.0, 7) == corpus);
  CHECK(subsample(std::vector<int>(1000), 0.5, 3).size() == 500);
  CHECK(subsample(corpus, 0.5, 7) == half);
  CHECK(subsample(corpus, 0.5, 8) != half);
  CHECK_THROWS_AS(subsample(corpus, 0.0, 7), ValidationError);
  CHECK_THROWS_AS(subsample(corpus, 1.5, 7), ValidationError);
}

TEST_CASE("pseudo-labelling output does not depend on the worker count") {
  const SynthConfig sc;
  const auto corpus = copy_corpus(40, sc);
  const auto one = manifest_jsonl(pseudo_label(corrupting(sc, 0.2), corpus, CorpusContext{}, Vocabulary(sc.vocab), kEosToken, 1));
  for (int jobs : {2, 4, 8}) {
    CHECK(manifest_jsonl(pseudo_label(corrupting(sc, 0.2), corpus, CorpusContext{}, Vocabulary(sc.vocab), kEosToken, jobs)) ==
          one);
  }

  const ModelParams model = init_params(testing::tiny_config(sc.vocab), 3);
  CorpusContext ctx;
  ctx.synth.input_dim = 6;
  ctx.synth.vocab = 12;
  DecodeConfig dc;
  dc.max_len = 10;
  const auto small = copy_corpus(12, ctx.synth);
  const auto a = manifest_jsonl(pseudo_label(model, small, dc, ctx, 1));
  CHECK(manifest_jsonl(pseudo_label(model, small, dc, ctx, 4)) == a);
}

TEST_CASE("wav-backed samples go through the front end") {
  const std::string dir = testing::temp_dir("wav_corpus");
  const SynthConfig sc;
  const FrontEnd fe;
  const auto s = synth_task(TaskKind::copy, 3, 6, sc);
  write_wav(dir + "/a.wav", synthesize(s.features, fe), WavFormat::float32);
  const Sample sample{"a", Vocabulary(sc.vocab).detokenize(s.transcript), std::string("a.wav")};
  CorpusContext ctx;
  ctx.base_dir = dir;
  const FeatureSequence f = load_features(sample, ctx);
  REQUIRE(f.length() == s.features.length());
  CHECK((f.frames - s.features.frames).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(nearest_prototype_decode(f, sc) == s.spoken);

  Waveform wrong_rate = synthesize(s.features, fe);
  wrong_rate.sample_rate = 8000.0;
  write_wav(dir + "/b.wav", wrong_rate);
  CHECK_THROWS_AS(load_features({"b", "", std::string("b.wav")}, ctx), ValidationError);

  const auto examples = training_examples(std::vector<Sample>{sample}, ctx, Vocabulary(sc.vocab));
  CHECK(examples[0].targets == s.transcript);
  CHECK(examples[0].ground_truth == s.transcript);
}
