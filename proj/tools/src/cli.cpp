#include <CLI11.hpp>
#include <ostream>

#include "cliplab/cli/app.hpp"

namespace cliplab::cli {

namespace {

std::vector<std::string> collect_argv(int argc, const char* const* argv) {
  return std::vector<std::string>(argv, argv + argc);
}

fs::path default_dir(const std::string& given, const std::string& stem) {
  if (!given.empty()) return given;
  return output_root() / stem;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"cliplab: clipped policy-gradient objectives on synthetic verifiable-reward tasks"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);
  const std::vector<std::string> args = collect_argv(argc, argv);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference and case-table suites for every method");
  GradcheckOptions gopt;
  std::string gc_config;
  std::string gc_out;
  gc->add_option("--config", gc_config, "config file; objective.eps_l/eps_h/normalization are used");
  gc->add_option("--seed", gopt.seed, "instance seed")->capture_default_str();
  gc->add_option("--instances", gopt.instances, "random instances per method and suite")->capture_default_str();
  gc->add_option("--fd-step", gopt.h, "finite-difference step")->capture_default_str();
  gc->add_option("--tolerance", gopt.tolerance, "relative tolerance")->capture_default_str();
  gc->add_option("--beta1", gopt.beta1, "beta1 for gppo_general instances")->capture_default_str();
  gc->add_option("--beta2", gopt.beta2, "beta2 for gppo_general instances")->capture_default_str();
  gc->add_option("--inject-fault", gopt.fault, "deliberate bug: gppo-upper-sign, gppo-lower-sign, cispo-upper-drop, ppo-indicator");
  gc->add_option("--out", gc_out, "output directory");
  gc->allow_extras();

  // train
  auto* tr = app.add_subcommand("train", "run one training job");
  std::string tr_config;
  std::string tr_out;
  bool dry_run = false;
  tr->add_option("--config", tr_config, "JSON config file");
  tr->add_option("--out", tr_out, "run directory");
  tr->add_flag("--dry-run", dry_run, "validate and write the manifest only");
  tr->allow_extras();
  tr->footer("Any config field can be overridden with --section.key value (e.g. --objective.eps_h 0.3).\n"
             "Shortcuts: --method, --steps, --seed.");

  // compare
  auto* cmp = app.add_subcommand("compare", "matched-seed grid over methods and config values");
  std::string cmp_config;
  std::string cmp_out;
  std::string methods;
  std::string seeds = "1-10";
  std::vector<std::string> vary;
  int jobs = 1;
  cmp->add_option("--config", cmp_config, "JSON config file shared by every cell");
  cmp->add_option("--methods", methods, "comma-separated methods");
  cmp->add_option("--seeds", seeds, "seed list, e.g. 1,2,3 or 1-10")->capture_default_str();
  cmp->add_option("--vary", vary, "section.key=v1,v2,... (repeatable)");
  cmp->add_option("--jobs", jobs, "cells run in parallel")->capture_default_str();
  cmp->add_option("--out", cmp_out, "output directory");
  cmp->allow_extras();

  // curate
  auto* cur = app.add_subcommand("curate", "dedup -> n-gram decontamination -> pass-rate filter");
  CurateRequest creq;
  std::string cur_out;
  cur->add_option("--corpus", creq.corpus_path, "corpus records (jsonl)")->required();
  cur->add_option("--eval", creq.eval_path, "evaluation set (jsonl records or token arrays)");
  cur->add_option("--oracle", creq.oracle_path, "oracle policy checkpoint");
  cur->add_option("--ngram", creq.ngram, "n-gram width")->capture_default_str();
  cur->add_option("--k", creq.passrate.k, "rollouts per record")->capture_default_str();
  cur->add_option("--threshold", creq.passrate.threshold, "keep iff pass fraction > threshold")->capture_default_str();
  cur->add_option("--min-checks", creq.passrate.min_checks, "minimum test checks for code records")->capture_default_str();
  cur->add_option("--max-len", creq.passrate.max_len, "rollout length limit")->capture_default_str();
  cur->add_option("--temperature", creq.passrate.temperature, "oracle sampling temperature")->capture_default_str();
  cur->add_option("--seed", creq.passrate.seed, "rollout seed")->capture_default_str();
  cur->add_flag("--skip-passrate", creq.skip_passrate, "run dedup and n-gram stages only");
  cur->add_option("--out", cur_out, "output directory");

  // oracle
  auto* orc = app.add_subcommand("oracle", "fit a tabular policy to a corpus's reference responses");
  OracleRequest oreq;
  std::string orc_out;
  orc->add_option("--corpus", oreq.corpus_path, "corpus records (jsonl)")->required();
  orc->add_option("--out", orc_out, "output directory (checkpoint written to oracle.json)");
  orc->add_option("--seed", oreq.fit.seed, "init seed")->capture_default_str();
  orc->add_option("--steps", oreq.fit.steps, "full-batch Adam steps")->capture_default_str();
  orc->add_option("--lr", oreq.fit.lr, "Adam step size")->capture_default_str();
  orc->add_option("--prompt-rows", oreq.fit.shape.prompt_rows, "prompt-conditioned table rows")->capture_default_str();
  orc->add_option("--window", oreq.fit.shape.context_window, "context window")->capture_default_str();

  // replay
  auto* rep = app.add_subcommand("replay", "re-run a recorded run from its manifest");
  std::string manifest;
  std::string rep_out;
  bool check = false;
  rep->add_option("manifest", manifest, "manifest.json of the original run")->required();
  rep->add_option("--out", rep_out, "output directory (default: <run>-replay)");
  rep->add_flag("--check", check, "fail unless every output file is byte-identical");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (gc->parsed()) {
      const json doc = load_config_doc(gc_config, parse_overrides(gc->remaining()));
      const TrainConfig cfg = resolve_config(doc);
      gopt.eps_l = cfg.clip.eps_l;
      gopt.eps_h = cfg.clip.eps_h;
      gopt.normalization = cfg.clip.normalization;
      GradcheckRequest req{gopt};
      run_gradcheck_command(req, default_dir(gc_out, "gradcheck-" + short_hash(to_json(req).dump())),
                            args, out);
    } else if (tr->parsed()) {
      const json doc = load_config_doc(tr_config, parse_overrides(tr->remaining()));
      const TrainConfig cfg = resolve_config(doc);
      TrainRequest req{to_json(cfg), tr_config, dry_run};
      const std::string stem = "train-" + std::string(to_string(cfg.clip.method)) + "-s" +
                               std::to_string(cfg.seed) + "-" + short_hash(req.config.dump());
      run_train(req, default_dir(tr_out, stem), args, out);
    } else if (cmp->parsed()) {
      CompareRequest req;
      req.base = to_json(resolve_config(load_config_doc(cmp_config, parse_overrides(cmp->remaining()))));
      req.config_path = cmp_config;
      req.methods = split_list(methods);
      req.seeds = parse_seed_list(seeds);
      for (const std::string& v : vary) {
        const auto eq = v.find('=');
        if (eq == std::string::npos) throw ValidationError("--vary expects section.key=v1,v2,...");
        req.vary.push_back({v.substr(0, eq), split_list(v.substr(eq + 1))});
      }
      req.jobs = jobs;
      run_compare(req, default_dir(cmp_out, "compare-" + short_hash(to_json(req).dump())), args, out);
    } else if (cur->parsed()) {
      run_curate(creq, default_dir(cur_out, "curate-" + short_hash(to_json(creq).dump())), args, out);
    } else if (orc->parsed()) {
      run_oracle(oreq, default_dir(orc_out, "oracle-" + short_hash(to_json(oreq).dump())), args, out);
    } else if (rep->parsed()) {
      const fs::path m(manifest);
      const fs::path dest = rep_out.empty() ? fs::path(m.parent_path().string() + "-replay") : fs::path(rep_out);
      run_replay(m, dest, check, out);
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const SuiteFailure& e) {
    err << "failed: " << e.what() << '\n';
    return kExitSuiteFailure;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace cliplab::cli
