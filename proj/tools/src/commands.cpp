#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "cliplab/cli/app.hpp"

namespace cliplab::cli {

// ---- train --------------------------------------------------------------

json to_json(const TrainRequest& r) {
  return {{"config", r.config}, {"config_path", r.config_path}, {"dry_run", r.dry_run}};
}

TrainRequest train_request_from_json(const json& j) {
  TrainRequest r;
  r.config = j.at("config");
  r.config_path = j.value("config_path", std::string{});
  r.dry_run = j.value("dry_run", false);
  return r;
}

fs::path run_train(const TrainRequest& r, const fs::path& out, const std::vector<std::string>& argv,
                   std::ostream& log) {
  const TrainConfig cfg = resolve_config(r.config);
  TrainRequest resolved = r;
  resolved.config = to_json(cfg);
  write_manifest({"train", r.config_path, {cfg.seed}, out, argv, to_json(resolved)});
  if (r.dry_run) {
    log << "dry run: wrote " << (out / "manifest.json").string() << '\n';
    return out;
  }
  const TrainResult result = train(cfg, TrainOptions{out});
  log << "train: " << result.history.size() << " steps, method " << to_string(cfg.clip.method);
  if (!result.history.empty()) log << ", final mean reward " << result.history.back().mean_reward;
  log << "\nrun directory: " << out.string() << '\n';
  return out;
}

// ---- gradcheck ----------------------------------------------------------

json to_json(const GradcheckRequest& r) {
  const GradcheckOptions& o = r.options;
  return {{"seed", o.seed},
          {"instances", o.instances},
          {"h", o.h},
          {"tolerance", o.tolerance},
          {"eps_l", o.eps_l},
          {"eps_h", o.eps_h},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"normalization", to_string(o.normalization)},
          {"fault", o.fault}};
}

GradcheckRequest gradcheck_request_from_json(const json& j) {
  GradcheckRequest r;
  GradcheckOptions& o = r.options;
  o.seed = j.at("seed").get<std::uint64_t>();
  o.instances = j.at("instances").get<int>();
  o.h = j.at("h").get<double>();
  o.tolerance = j.at("tolerance").get<double>();
  o.eps_l = j.at("eps_l").get<double>();
  o.eps_h = j.at("eps_h").get<double>();
  o.beta1 = j.at("beta1").get<double>();
  o.beta2 = j.at("beta2").get<double>();
  o.normalization = parse_normalization(j.at("normalization").get<std::string>());
  o.fault = j.value("fault", std::string{});
  return r;
}

GradcheckReport run_gradcheck_command(const GradcheckRequest& r, const fs::path& out,
                                      const std::vector<std::string>& argv, std::ostream& log) {
  write_manifest({"gradcheck", "", {r.options.seed}, out, argv, to_json(r)});
  const GradcheckReport report = run_gradcheck(r.options);
  write_file_atomic(out / "report.json", report.to_json().dump(2) + "\n");
  log << report.to_text();
  if (!report.passed()) throw SuiteFailure("gradcheck failed");
  return report;
}

// ---- curate -------------------------------------------------------------

json to_json(const CurateRequest& r) {
  const PassrateOptions& p = r.passrate;
  return {{"corpus", r.corpus_path},
          {"eval", r.eval_path},
          {"oracle", r.oracle_path},
          {"ngram", r.ngram},
          {"skip_passrate", r.skip_passrate},
          {"k", p.k},
          {"threshold", p.threshold},
          {"min_checks", p.min_checks},
          {"max_len", p.max_len},
          {"temperature", p.temperature},
          {"seed", p.seed}};
}

CurateRequest curate_request_from_json(const json& j) {
  CurateRequest r;
  r.corpus_path = j.at("corpus").get<std::string>();
  r.eval_path = j.value("eval", std::string{});
  r.oracle_path = j.value("oracle", std::string{});
  r.ngram = j.at("ngram").get<int>();
  r.skip_passrate = j.at("skip_passrate").get<bool>();
  r.passrate.k = j.at("k").get<int>();
  r.passrate.threshold = j.at("threshold").get<double>();
  r.passrate.min_checks = j.at("min_checks").get<int>();
  r.passrate.max_len = j.at("max_len").get<int>();
  r.passrate.temperature = j.at("temperature").get<double>();
  r.passrate.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

json CurateReport::to_json() const {
  json st = json::array();
  std::map<std::string, std::map<std::string, std::size_t>> reasons;
  for (const auto& [stage, rej] : rejected) {
    const std::string& reason = rej.reason;
    reasons[stage][reason.substr(0, reason.find(':'))]++;
  }
  for (const StageCount& s : stages) {
    st.push_back({{"stage", s.name}, {"input", s.input}, {"kept", s.kept}, {"removed", s.removed},
                  {"reasons", reasons[s.name]}});
  }
  return {{"format", "cliplab.curation-report.v1"},
          {"input", stages.empty() ? kept.size() : stages.front().input},
          {"output", kept.size()},
          {"stages", std::move(st)},
          {"ties", ties},
          {"verifier_errors", verifier_errors}};
}

namespace {

std::vector<CorpusRecord> read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read corpus '" + path + "'");
  try {
    return read_corpus(in);
  } catch (const std::exception& e) {
    throw ValidationError("corpus '" + path + "': " + e.what());
  }
}

std::string rejection_line(const std::string& stage, const Rejection& r) {
  json j = {{"format", "cliplab.rejection.v1"},
            {"stage", stage},
            {"id", r.record.id()},
            {"reason", r.reason},
            {"record", json::parse(corpus_record_to_json_line(r.record))}};
  return j.dump();
}

// Passrate rejections carry the reason category first so reports can group them.
std::string passrate_reason(const PassStats& s, const std::string& detail) {
  if (s.outcome == "verifier_error") return detail;
  return s.outcome + ": " + detail;
}

}  // namespace

CurateReport run_curate(const CurateRequest& r, const fs::path& out,
                        const std::vector<std::string>& argv, std::ostream& log) {
  if (r.ngram < 1) throw ValidationError("curate: --ngram must be >= 1");
  if (r.passrate.k < 1) throw ValidationError("curate: --k must be >= 1");
  if (!r.skip_passrate && r.oracle_path.empty()) {
    throw ValidationError("curate: --oracle is required unless --skip-passrate is given");
  }
  std::vector<CorpusRecord> corpus = read_corpus_file(r.corpus_path);
  std::vector<std::vector<int>> eval;
  if (!r.eval_path.empty()) {
    std::ifstream in(r.eval_path);
    if (!in) throw ValidationError("cannot read eval set '" + r.eval_path + "'");
    try {
      eval = read_eval_set(in);
    } catch (const std::exception& e) {
      throw ValidationError("eval set '" + r.eval_path + "': " + e.what());
    }
  }
  std::optional<Checkpoint> oracle;
  if (!r.skip_passrate) {
    try {
      oracle = load_checkpoint(r.oracle_path);
    } catch (const std::exception& e) {
      throw ValidationError("oracle '" + r.oracle_path + "': " + e.what());
    }
  }

  write_manifest({"curate", "", {r.passrate.seed}, out, argv, to_json(r)});

  CurateReport report;
  DedupResult dedup = exact_dedup(corpus);
  report.stages.push_back({"dedup", corpus.size(), dedup.kept.size(), dedup.removed.size()});
  for (Rejection& rej : dedup.removed) report.rejected.emplace_back("dedup", std::move(rej));

  NgramResult ngram = ngram_filter(dedup.kept, eval, r.ngram);
  report.stages.push_back({"ngram", dedup.kept.size(), ngram.kept.size(), ngram.rejected.size()});
  for (Rejection& rej : ngram.rejected) {
    rej.reason = "ngram_overlap: " + rej.reason;
    report.rejected.emplace_back("ngram", std::move(rej));
  }

  std::string stats_text;
  if (r.skip_passrate) {
    report.kept = std::move(ngram.kept);
  } else {
    PassrateResult pr = passrate_filter(ngram.kept, oracle->model, r.passrate);
    report.stages.push_back({"passrate", ngram.kept.size(), pr.kept.size(), pr.rejected.size()});
    report.ties = pr.ties;
    report.verifier_errors = pr.verifier_errors;
    std::map<std::string, const PassStats*> by_id;
    for (const PassStats& s : pr.stats) {
      by_id[s.id] = &s;
      stats_text += json{{"format", "cliplab.passstats.v1"},
                         {"id", s.id},
                         {"rollouts", s.rollouts},
                         {"full_passes", s.full_passes},
                         {"fraction", s.fraction},
                         {"outcome", s.outcome}}
                        .dump() +
                    "\n";
    }
    for (Rejection& rej : pr.rejected) {
      if (const auto it = by_id.find(rej.record.id()); it != by_id.end()) {
        rej.reason = passrate_reason(*it->second, rej.reason);
      }
      report.rejected.emplace_back("passrate", std::move(rej));
    }
    report.kept = std::move(pr.kept);
  }

  std::ostringstream kept;
  write_corpus(kept, report.kept);
  std::string rejected;
  for (const auto& [stage, rej] : report.rejected) rejected += rejection_line(stage, rej) + "\n";
  write_file_atomic(out / "kept.jsonl", kept.str());
  write_file_atomic(out / "rejected.jsonl", rejected);
  if (!r.skip_passrate) write_file_atomic(out / "passrate.jsonl", stats_text);
  write_file_atomic(out / "report.json", report.to_json().dump(2) + "\n");

  for (const StageCount& s : report.stages) {
    log << s.name << ": " << s.input << " in, " << s.kept << " kept, " << s.removed << " removed\n";
  }
  log << "output: " << report.kept.size() << " records in " << (out / "kept.jsonl").string() << '\n';
  return report;
}

// ---- oracle -------------------------------------------------------------

json to_json(const OracleRequest& r) {
  const ModelShape& sh = r.fit.shape;
  return {{"corpus_path", r.corpus_path},
          {"steps", r.fit.steps},
          {"lr", r.fit.lr},
          {"seed", r.fit.seed},
          {"model",
           {{"kind", to_string(sh.kind)},
            {"vocab_size", sh.vocab_size},
            {"context_window", sh.context_window},
            {"prompt_rows", sh.prompt_rows},
            {"hidden", sh.hidden}}}};
}

OracleRequest oracle_request_from_json(const json& j) {
  OracleRequest r;
  r.corpus_path = j.at("corpus_path").get<std::string>();
  r.fit.steps = j.at("steps").get<int>();
  r.fit.lr = j.at("lr").get<double>();
  r.fit.seed = j.at("seed").get<std::uint64_t>();
  const json& m = j.at("model");
  r.fit.shape.kind = parse_model_kind(m.at("kind").get<std::string>());
  r.fit.shape.vocab_size = m.at("vocab_size").get<int>();
  r.fit.shape.context_window = m.at("context_window").get<int>();
  r.fit.shape.prompt_rows = m.at("prompt_rows").get<std::size_t>();
  r.fit.shape.hidden = m.at("hidden").get<int>();
  return r;
}

fs::path run_oracle(const OracleRequest& r, const fs::path& out, const std::vector<std::string>& argv,
                    std::ostream& log) {
  try {
    r.fit.shape.validate();
  } catch (const InvalidInput& e) {
    throw ValidationError(std::string("oracle: ") + e.what());
  }
  if (r.fit.steps < 0 || !(r.fit.lr > 0.0)) throw ValidationError("oracle: steps must be >= 0 and lr positive");
  const std::vector<CorpusRecord> corpus = read_corpus_file(r.corpus_path);
  write_manifest({"oracle", "", {r.fit.seed}, out, argv, to_json(r)});
  std::vector<TaskSpec> tasks;
  tasks.reserve(corpus.size());
  for (const CorpusRecord& rec : corpus) tasks.push_back(rec.task);
  PolicyModel model = fit_reference_policy(tasks, r.fit);
  const std::size_t n = model.parameter_count();
  Checkpoint ck{std::move(model), make_optimizer_state(OptimizerConfig{}, n), r.fit.seed, 0,
                std::string(SeededRng::kAlgorithm), static_cast<std::uint64_t>(r.fit.steps)};
  const fs::path path = out / "oracle.json";
  save_checkpoint(ck, path);
  log << "oracle: fitted " << tasks.size() << " reference responses, wrote " << path.string() << '\n';
  return path;
}

// ---- replay -------------------------------------------------------------

std::vector<fs::path> replay_artifacts(const Manifest&, const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir);
    if (rel == "manifest.json") continue;
    out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void run_replay(const fs::path& manifest_path, const fs::path& out, bool check, std::ostream& log) {
  const Manifest m = read_manifest(manifest_path);
  const fs::path original = manifest_path.parent_path();
  if (fs::weakly_canonical(out) == fs::weakly_canonical(original)) {
    throw ValidationError("replay output directory must differ from the original run");
  }
  bool suite_failed = false;
  if (m.command == "train") {
    run_train(train_request_from_json(m.request), out, m.argv, log);
  } else if (m.command == "compare") {
    run_compare(compare_request_from_json(m.request), out, m.argv, log);
  } else if (m.command == "curate") {
    run_curate(curate_request_from_json(m.request), out, m.argv, log);
  } else if (m.command == "oracle") {
    run_oracle(oracle_request_from_json(m.request), out, m.argv, log);
  } else if (m.command == "gradcheck") {
    try {
      run_gradcheck_command(gradcheck_request_from_json(m.request), out, m.argv, log);
    } catch (const SuiteFailure&) {
      suite_failed = true;
    }
  } else {
    throw ValidationError("manifest command '" + m.command + "' cannot be replayed");
  }
  if (check) {
    const std::vector<fs::path> want = replay_artifacts(m, original);
    const std::vector<fs::path> got = replay_artifacts(m, out);
    std::vector<std::string> diffs;
    for (const fs::path& rel : want) {
      if (!fs::exists(out / rel)) {
        diffs.push_back(rel.string() + " (missing)");
      } else if (slurp(original / rel) != slurp(out / rel)) {
        diffs.push_back(rel.string());
      }
    }
    for (const fs::path& rel : got) {
      if (!fs::exists(original / rel)) diffs.push_back(rel.string() + " (extra)");
    }
    if (!diffs.empty()) {
      std::string msg = "replay differs from the original run:";
      for (const std::string& d : diffs) msg += "\n  " + d;
      throw SuiteFailure(msg);
    }
    log << "replay: " << want.size() << " files identical to " << original.string() << '\n';
  }
  if (suite_failed) throw SuiteFailure("replayed gradcheck failed (as recorded)");
}

}  // namespace cliplab::cli
