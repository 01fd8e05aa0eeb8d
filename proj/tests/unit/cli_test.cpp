#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cliplab/cli/app.hpp"
#include "planted_corpus.hpp"

using namespace cliplab;
using namespace cliplab::cli;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cliplab-cli-" + name);
  fs::remove_all(p);
  return p;
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "cliplab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

std::size_t file_count(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

const std::vector<std::string> kSmall = {"--rollout.global_batch_prompts", "4", "--rollout.minibatch_prompts", "2",
                                         "--rollout.group_size", "2", "--task.pool_size", "8"};

std::vector<std::string> with_small(std::vector<std::string> args) {
  args.insert(args.end(), kSmall.begin(), kSmall.end());
  return args;
}

}  // namespace

TEST_CASE("parse_overrides") {
  const Overrides o = parse_overrides({"--objective.eps_h", "0.3", "--method=cispo", "--steps", "5", "--seed", "9"});
  REQUIRE(o.size() == 4);
  CHECK(o[0] == std::pair<std::string, std::string>{"objective.eps_h", "0.3"});
  CHECK(o[1] == std::pair<std::string, std::string>{"objective.method", "cispo"});
  CHECK(o[2].first == "run.steps");
  CHECK(o[3].first == "run.seed");
  CHECK_THROWS_AS(parse_overrides({"--objective.eps_h"}), ValidationError);
  CHECK_THROWS_AS(parse_overrides({"positional"}), ValidationError);
  CHECK_THROWS_AS(parse_overrides({"--bogus", "1"}), ValidationError);

  json doc = json::object();
  apply_override(doc, "objective.eps_h", "0.3");
  apply_override(doc, "objective.method", "gppo");
  CHECK(doc["objective"]["eps_h"] == 0.3);
  CHECK(doc["objective"]["method"] == "gppo");
  CHECK_THROWS_AS(apply_override(doc, "a.b.c", "1"), ValidationError);
}

TEST_CASE("seed lists, quantiles and steps_to_reach") {
  CHECK(parse_seed_list("1-4") == std::vector<std::uint64_t>{1, 2, 3, 4});
  CHECK(parse_seed_list("3,1,7") == std::vector<std::uint64_t>{3, 1, 7});
  CHECK_THROWS_AS(parse_seed_list("5-2"), ValidationError);
  CHECK_THROWS_AS(parse_seed_list("x"), ValidationError);
  CHECK(quantile({3, 1, 2}, 0.5) == 2);
  CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(quantile({1, 2, 3, 4, 5}, 0.25) == 2);
  CHECK(quantile({1, 2}, 0.25) == 1.25);
  CHECK(steps_to_reach({0.1, 0.5, 0.4, 0.9}, 0.45) == 2);
  CHECK(steps_to_reach({0.1, 0.2}, 0.5) == 0);
  CHECK(split_list("a,,b") == std::vector<std::string>{"a", "b"});
}

TEST_CASE("manifest round-trip") {
  Manifest m{"train", "c.json", {1, 2}, "/tmp/x", {"cliplab", "train"}, json{{"k", 1}}};
  const Manifest back = manifest_from_json(to_json(m));
  CHECK(back.command == "train");
  CHECK(back.seeds == m.seeds);
  CHECK(back.request == m.request);
  CHECK(to_json(m).at("versions").at("rng") == SeededRng::kAlgorithm);
  CHECK_THROWS_AS(manifest_from_json(json{{"command", "train"}}), ValidationError);
}

TEST_CASE("top-level usage and exit codes") {
  CHECK(invoke({"--version"}).code == kExitOk);
  CHECK(invoke({"--help"}).code == kExitOk);
  CHECK(invoke({}).code == kExitValidation);
  CHECK(invoke({"nonsense"}).code == kExitValidation);
  CHECK(invoke({"train", "--config", "/nonexistent/config.json"}).code == kExitValidation);
}

TEST_CASE("train writes metrics, manifest and checkpoints") {
  const fs::path dir = scratch("train");
  const Run r = invoke(with_small({"train", "--method", "gppo", "--steps", "10", "--out", dir.string()}));
  REQUIRE(r.code == kExitOk);
  CHECK(line_count(dir / "metrics.jsonl") == 10);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "checkpoint-final.json"));
  const Manifest m = read_manifest(dir / "manifest.json");
  CHECK(m.command == "train");
  CHECK(m.seeds == std::vector<std::uint64_t>{1});
  const TrainConfig cfg = resolve_config(m.request.at("config"));
  CHECK(cfg.clip.method == Method::Gppo);
  CHECK(cfg.total_steps == 10);

  const fs::path replay = scratch("train-replay");
  const Run rr = invoke({"replay", (dir / "manifest.json").string(), "--out", replay.string(), "--check"});
  CHECK(rr.code == kExitOk);
  CHECK(slurp(dir / "metrics.jsonl") == slurp(replay / "metrics.jsonl"));

  // A tampered output makes the check fail.
  std::ofstream(dir / "metrics.jsonl", std::ios::app) << "{}\n";
  const fs::path replay2 = scratch("train-replay2");
  CHECK(invoke({"replay", (dir / "manifest.json").string(), "--out", replay2.string(), "--check"}).code ==
        kExitSuiteFailure);
  fs::remove_all(dir);
  fs::remove_all(replay);
  fs::remove_all(replay2);
}

TEST_CASE("an invalid config writes nothing") {
  const fs::path dir = scratch("invalid");
  CHECK(invoke({"train", "--rollout.group_size", "1", "--out", dir.string()}).code == kExitValidation);
  CHECK(invoke({"train", "--objective.bogus", "1", "--out", dir.string()}).code == kExitValidation);
  CHECK(invoke({"train", "--method", "nope", "--out", dir.string()}).code == kExitValidation);
  CHECK(invoke({"train", "stray", "--out", dir.string()}).code == kExitValidation);
  CHECK_FALSE(fs::exists(dir));
}

TEST_CASE("dry run writes only the manifest") {
  const fs::path dir = scratch("dry");
  REQUIRE(invoke({"train", "--dry-run", "--out", dir.string()}).code == kExitOk);
  CHECK(file_count(dir) == 1);
  CHECK(fs::exists(dir / "manifest.json"));
  fs::remove_all(dir);
}

TEST_CASE("default output root comes from the environment") {
  const fs::path root = scratch("root");
  ::setenv(kOutputRootEnv, root.c_str(), 1);
  CHECK(output_root() == root);
  REQUIRE(invoke({"train", "--dry-run", "--method", "cispo", "--seed", "4"}).code == kExitOk);
  std::size_t dirs = 0;
  for (const auto& e : fs::directory_iterator(root)) {
    ++dirs;
    CHECK(e.path().filename().string().rfind("train-cispo-s4-", 0) == 0);
  }
  CHECK(dirs == 1);
  ::unsetenv(kOutputRootEnv);
  CHECK(output_root() == fs::path("runs"));
  fs::remove_all(root);
}

TEST_CASE("compare needs two variants and two seeds") {
  const fs::path dir = scratch("cmp-bad");
  CHECK(invoke({"compare", "--methods", "gppo", "--out", dir.string()}).code == kExitValidation);
  CHECK(invoke({"compare", "--methods", "gppo,cispo", "--seeds", "1", "--out", dir.string()}).code == kExitValidation);
  CHECK(invoke({"compare", "--methods", "gppo,gppo", "--out", dir.string()}).code == kExitValidation);
  CHECK(invoke({"compare", "--methods", "gppo,bogus", "--out", dir.string()}).code == kExitValidation);
  CHECK(invoke({"compare", "--methods", "gppo", "--vary", "objective.method=cispo,gppo", "--out", dir.string()}).code ==
        kExitValidation);
  CHECK_FALSE(fs::exists(dir));
}

TEST_CASE("compare summary and replay") {
  const fs::path dir = scratch("cmp");
  const Run r = invoke(with_small({"compare", "--methods", "gppo,clip_higher", "--seeds", "1-3", "--steps", "4",
                                "--vary", "sft.alpha=0,0.1", "--jobs", "2", "--out", dir.string()}));
  REQUIRE(r.code == kExitOk);
  const json summary = json::parse(slurp(dir / "summary.json"));
  REQUIRE(summary.at("variants").size() == 4);
  for (const json& v : summary.at("variants")) {
    CHECK(v.at("complete") == true);
    CHECK(v.at("cells").size() == 3);
  }
  CHECK(fs::exists(dir / "summary.csv"));
  CHECK(line_count(dir / "cells" / "gppo_sft.alpha=0.1" / "seed-2" / "metrics.jsonl") == 4);

  const fs::path replay = scratch("cmp-replay");
  CHECK(invoke({"replay", (dir / "manifest.json").string(), "--out", replay.string(), "--check"}).code == kExitOk);
  CHECK(slurp(dir / "summary.csv") == slurp(replay / "summary.csv"));
  fs::remove_all(dir);
  fs::remove_all(replay);
}

TEST_CASE("curate: empty corpus, skip-passrate and missing oracle") {
  const fs::path dir = scratch("cur");
  fs::create_directories(dir);
  std::ofstream(dir / "empty.jsonl").close();
  const fs::path out = dir / "out";
  REQUIRE(invoke({"curate", "--corpus", (dir / "empty.jsonl").string(), "--skip-passrate", "--out", out.string()}).code ==
          kExitOk);
  CHECK(slurp(out / "kept.jsonl").empty());
  const json report = json::parse(slurp(out / "report.json"));
  CHECK(report.dump().find("dedup") != std::string::npos);

  CHECK(invoke({"curate", "--corpus", (dir / "empty.jsonl").string(), "--out", (dir / "o2").string()}).code ==
        kExitValidation);
  CHECK(invoke({"curate", "--corpus", (dir / "missing.jsonl").string(), "--skip-passrate", "--out",
             (dir / "o3").string()})
            .code == kExitValidation);
  CHECK(invoke({"curate", "--corpus", (dir / "empty.jsonl").string(), "--skip-passrate", "--ngram", "0", "--out",
             (dir / "o4").string()})
            .code == kExitValidation);
  fs::remove_all(dir);
}

TEST_CASE("curate with dedup and decontamination on a small planted corpus") {
  testing::PlantedCorpusOptions opt;
  opt.clean = 40;
  opt.duplicates = 5;
  opt.contaminated = 4;
  opt.undertested = 0;
  opt.eval_items = 10;
  const auto planted = testing::make_planted_corpus(opt);
  const fs::path dir = scratch("cur-planted");
  fs::create_directories(dir);
  {
    std::ofstream c(dir / "corpus.jsonl");
    write_corpus(c, planted.corpus);
    std::ofstream e(dir / "eval.jsonl");
    for (const auto& item : planted.eval_set) e << json(item).dump() << '\n';
  }
  const fs::path out = dir / "out";
  REQUIRE(invoke({"curate", "--corpus", (dir / "corpus.jsonl").string(), "--eval", (dir / "eval.jsonl").string(),
               "--skip-passrate", "--out", out.string()})
              .code == kExitOk);
  CHECK(line_count(out / "kept.jsonl") == 40);
  CHECK(line_count(out / "rejected.jsonl") == 9);
  fs::remove_all(dir);
}

TEST_CASE("gradcheck passes and detects an injected fault") {
  const fs::path ok = scratch("gc-ok");
  const Run r = invoke({"gradcheck", "--instances", "5", "--out", ok.string()});
  CHECK(r.code == kExitOk);
  CHECK(fs::exists(ok / "report.json"));
  for (const char* fault : kFaults) {
    CAPTURE(fault);
    const fs::path bad = scratch("gc-bad");
    CHECK(invoke({"gradcheck", "--instances", "5", "--inject-fault", fault, "--out", bad.string()}).code ==
          kExitSuiteFailure);
    fs::remove_all(bad);
  }
  CHECK(invoke({"gradcheck", "--inject-fault", "nope", "--out", scratch("gc-x").string()}).code == kExitValidation);
  fs::remove_all(ok);
}
