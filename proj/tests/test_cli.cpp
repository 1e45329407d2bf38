#include "dwtk/checkpoint.hpp"
#include "dwtk/corpus.hpp"
#include "dwtk/harness.hpp"

#include "support.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

using namespace dwtk;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

/// Runs distilkit with `args`, capturing stdout and stderr together.
Run distilkit(const std::string& args, const std::string& dir) {
  const std::string log = dir + "/last.log";
  const std::string cmd = std::string(DISTILKIT_PATH) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(log)};
}

const char* kModelFlags = "--vocab 12 --input-dim 6 --width 8 --heads 2 --ffn-width 16 --max-positions 32";

/// One shared pipeline run: corpus, teacher, pseudo-labels, filter, student.
struct Pipeline {
  std::string dir = testing::temp_dir("cli");

  Pipeline() {
    const auto ok = [&](const std::string& args) {
      const Run r = distilkit(args, dir);
      if (r.code != 0) FAIL("distilkit " << args << " failed: " << r.out);
    };
    ok("make-corpus --count 48 --min-len 3 --max-len 5 --vocab 12 --input-dim 6 --seed 1 --out " + dir + "/train.jsonl");
    ok("make-corpus --count 8 --min-len 3 --max-len 5 --vocab 12 --input-dim 6 --seed 2 --prefix dev --out " + dir +
       "/dev.jsonl");
    ok("make-corpus --count 4 --min-len 20 --max-len 24 --vocab 12 --input-dim 6 --seed 3 --prefix long --wav-dir " +
       dir + "/wav --out " + dir + "/long.jsonl");
    ok("train-teacher --train " + dir + "/train.jsonl --out " + dir + "/teacher.dwtk " + kModelFlags +
       " --dec-layers 4 --steps 60 --batch-size 8 --warmup-steps 5 --peak-lr 5e-3 --loss-log " + dir + "/teacher.csv");
    ok("pseudo-label --manifest " + dir + "/train.jsonl --model " + dir + "/teacher.dwtk --max-len 12 --out " + dir +
       "/pl.jsonl");
    ok("filter --manifest " + dir + "/pl.jsonl --lambda 1000 --verify --out " + dir + "/kept.jsonl --report " + dir +
       "/filter.csv");
    write_file_atomic(dir + "/run.cfg", "steps = 20\nbatch_size = 8\nwarmup_steps = 2\nmax_len = 12\n");
    ok("distill --config " + dir + "/run.cfg --peak-lr 4e-3 --train " + dir + "/kept.jsonl --teacher " + dir +
       "/teacher.dwtk --out " + dir + "/student.dwtk --loss-log " + dir + "/student.csv");
  }
};

const Pipeline& pipeline() {
  static const Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("exit codes") {
  const std::string dir = testing::temp_dir("cli_codes");
  CHECK(distilkit("--help", dir).code == 0);
  CHECK(distilkit("", dir).code == 2);
  CHECK(distilkit("no-such-command", dir).code == 2);
  CHECK(distilkit("filter --manifest x.jsonl", dir).code == 2);  // missing --out
  CHECK(distilkit("make-corpus --task sing --out " + dir + "/m.jsonl", dir).code == 2);
  CHECK(distilkit("make-corpus --min-len 5 --max-len 2 --out " + dir + "/m.jsonl", dir).code == 2);
  const Run missing = distilkit("filter --manifest " + dir + "/absent.jsonl --out " + dir + "/o.jsonl", dir);
  CHECK(missing.code == 1);
  CHECK(missing.out.find("error:") != std::string::npos);
  write_file_atomic(dir + "/bad.jsonl", "{\"id\": 1}\n");
  CHECK(distilkit("filter --manifest " + dir + "/bad.jsonl --out " + dir + "/o.jsonl", dir).code == 2);
}

TEST_CASE("pipeline artifacts") {
  const Pipeline& p = pipeline();
  const std::string& d = p.dir;
  CHECK(read_manifest(d + "/train.jsonl").size() == 48);
  CHECK(read_file(d + "/teacher.csv").starts_with("step,lr,ce,pl,kl,mse,total,grad_norm\n"));
  const auto pl = read_pseudo_manifest(d + "/pl.jsonl");
  CHECK(pl.size() == 48);

  const std::string filter_csv = read_file(d + "/filter.csv");
  CHECK(filter_csv.starts_with("# schema=distilkit.v1\n"));
  const Report filter = parse_csv(filter_csv);
  CHECK(filter.number(0, "kept") + filter.number(0, "dropped") == 48);
  CHECK(parse_json(read_file(d + "/filter.json")).rows == filter.rows);

  const ModelParams teacher = load_checkpoint(d + "/teacher.dwtk");
  const ModelParams student = load_checkpoint(d + "/student.dwtk");
  CHECK(teacher.config.dec_layers == 4);
  CHECK(student.config.dec_layers == 2);
  CHECK(same_encoder(student, teacher));

  const RunConfig echoed = parse_run_config(read_file(d + "/student.dwtk.config"));
  CHECK(echoed.train.steps == 20);
  CHECK(echoed.train.peak_lr == 4e-3);
}

TEST_CASE("eval report matches its hypotheses") {
  const std::string& d = pipeline().dir;
  const Run r = distilkit("eval --model " + d + "/teacher.dwtk --manifest dev=" + d + "/dev.jsonl --ood-manifest " + d +
                              "/long.jsonl --max-len 12 --report " + d + "/eval.csv --hyps " + d + "/hyps.jsonl",
                          d);
  REQUIRE(r.code == 0);
  const RunReport run = run_report_from(parse_csv(read_file(d + "/eval.csv")));
  REQUIRE(run.datasets.size() == 2);
  CHECK(run.datasets[0].name == "dev");
  CHECK(run.datasets[1].name == "long");
  CHECK(run.datasets[1].ood);
  const auto hyps = read_hypotheses(d + "/hyps.jsonl");
  for (const auto& ds : run.datasets) {
    std::vector<Hypothesis> mine;
    for (const auto& h : hyps) {
      if (h.dataset == ds.name) mine.push_back(h);
    }
    CHECK(score_dataset(ds.name, ds.ood, mine).rates.wer == ds.rates.wer);
  }
  CHECK(parse_csv(read_file(d + "/eval.csv")).meta_value("config.max_len") == "12");

  const Run lf = distilkit("eval --model " + d + "/teacher.dwtk --manifest " + d +
                               "/long.jsonl --mode long --chunk-seconds 2 --max-len 12 --report " + d + "/long.csv",
                           d);
  CHECK(lf.code == 0);
  CHECK(distilkit("eval --model " + d + "/teacher.dwtk --manifest " + d + "/dev.jsonl --mode medium", d).code == 2);
  CHECK(distilkit("eval --model " + d + "/teacher.dwtk --manifest " + d + "/dev.jsonl --strategy speculative", d).code ==
        2);
}

TEST_CASE("speculative benchmark reports identical outputs") {
  const std::string& d = pipeline().dir;
  const Run r = distilkit("specdec-bench --main " + d + "/teacher.dwtk --assistant " + d + "/student.dwtk --manifest " +
                              d + "/dev.jsonl --batch-sizes 1,4 --max-len 12 --report " + d + "/bench.csv",
                          d);
  REQUIRE(r.code == 0);
  const Report bench = parse_csv(read_file(d + "/bench.csv"));
  REQUIRE(bench.rows.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(bench.cell(i, "identical") == "true");
  CHECK(distilkit("specdec-bench --main " + d + "/teacher.dwtk --assistant " + d + "/student.dwtk --manifest " + d +
                      "/dev.jsonl --reps 2",
                  d)
            .code == 2);
}

TEST_CASE("noise sweep clean row equals plain evaluation") {
  const std::string& d = pipeline().dir;
  REQUIRE(distilkit("eval --model " + d + "/teacher.dwtk --manifest dev=" + d + "/dev.jsonl --max-len 12 --report " + d +
                        "/clean.csv",
                    d)
              .code == 0);
  const Run r = distilkit("noise-sweep --model teacher=" + d + "/teacher.dwtk --model " + d +
                              "/student.dwtk --manifest dev=" + d + "/dev.jsonl --snr-grid clean,10,0 --max-len 12 --report " +
                              d + "/noise.csv",
                          d);
  REQUIRE(r.code == 0);
  const Report noise = parse_csv(read_file(d + "/noise.csv"));
  CHECK(noise.rows.size() == 6);
  const Report clean = parse_csv(read_file(d + "/clean.csv"));
  CHECK(noise.cell(0, "model") == "teacher");
  CHECK(noise.number(0, "wer") == clean.number(0, "wer"));
}

TEST_CASE("sweeps write parseable reports") {
  const std::string& d = pipeline().dir;
  const Run r = distilkit("sweep --kind threshold --grid 1000,200 --train " + d + "/pl.jsonl --teacher " + d +
                              "/teacher.dwtk --eval-manifest dev=" + d + "/dev.jsonl --steps 5 --batch-size 8 "
                              "--warmup-steps 1 --max-len 12 --report " + d + "/sweep.csv --out-dir " + d + "/points",
                          d);
  REQUIRE(r.code == 0);
  const Report sweep = parse_csv(read_file(d + "/sweep.csv"));
  CHECK(sweep.rows.size() == 2);
  CHECK(sweep.cell(0, "point") == "1000");
  CHECK(std::filesystem::exists(d + "/points/point_1000.dwtk"));
  CHECK(run_report_from(parse_csv(read_file(d + "/points/point_200.csv"))).datasets.size() == 1);

  const Run sizes = distilkit("sweep --kind model_size --grid 2-2,2-3 --lambda 1000 --train " + d + "/pl.jsonl --teacher " +
                                  d + "/teacher.dwtk --eval-manifest " + d + "/dev.jsonl --steps 3 --warmup-steps 1 "
                                  "--max-len 12 --report " + d + "/sizes.csv",
                              d);
  REQUIRE(sizes.code == 0);
  CHECK(parse_csv(read_file(d + "/sizes.csv")).number(1, "dec_layers") == 3);
}
