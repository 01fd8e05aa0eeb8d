#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cliplab/cli/gradcheck.hpp"
#include "cliplab/curation.hpp"
#include "cliplab/error.hpp"
#include "cliplab/trainer.hpp"

namespace cliplab::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitSuiteFailure = 3, kExitRuntime = 4 };

/// A verification suite ran and did not pass (gradcheck, replay --check).
class SuiteFailure : public Error {
 public:
  using Error::Error;
};

inline constexpr std::string_view kManifestFormat = "cliplab.manifest.v1";
inline constexpr const char* kOutputRootEnv = "CLIPLAB_OUTPUT_ROOT";

std::string_view version();

// ---- config -------------------------------------------------------------

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Pairs up `--section.key value` / `--section.key=value` tokens. Aliases: --method,
/// --steps, --seed. Throws ValidationError on anything else.
Overrides parse_overrides(const std::vector<std::string>& args);
/// Sets doc[section][key]; the value is read as JSON when it parses as a scalar, else as a string.
void apply_override(json& doc, const std::string& dotted_key, const std::string& value);
/// Reads a JSON config file (empty path: defaults only) and applies overrides.
json load_config_doc(const std::string& path, const Overrides& overrides);
/// Full config with every default filled in; throws ValidationError.
TrainConfig resolve_config(const json& doc);

/// $CLIPLAB_OUTPUT_ROOT, else ./runs.
fs::path output_root();
std::string short_hash(const std::string& text);
std::vector<std::uint64_t> parse_seed_list(const std::string& text);  // "1,2,5" or "1-10"
std::vector<std::string> split_list(const std::string& text, char sep = ',');

/// Writes `content` to `path` through a temporary file and rename.
void write_file_atomic(const fs::path& path, const std::string& content);

// ---- manifest -----------------------------------------------------------

/// Written before any computation. `request` holds everything needed to rerun.
struct Manifest {
  std::string command;
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  fs::path output_dir;
  std::vector<std::string> argv;
  json request;
};

json to_json(const Manifest& m);
Manifest manifest_from_json(const json& j);
void write_manifest(const Manifest& m);
Manifest read_manifest(const fs::path& path);

// ---- commands -----------------------------------------------------------

struct TrainRequest {
  json config;  // fully resolved
  std::string config_path;
  bool dry_run = false;
};
json to_json(const TrainRequest& r);
TrainRequest train_request_from_json(const json& j);
/// Returns the run directory.
fs::path run_train(const TrainRequest& r, const fs::path& out, const std::vector<std::string>& argv,
                   std::ostream& log);

struct VaryAxis {
  std::string key;  // section.key
  std::vector<std::string> values;
};

struct CompareRequest {
  json base;  // resolved config shared by every cell
  std::string config_path;
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  std::vector<VaryAxis> vary;
  int jobs = 1;
};
json to_json(const CompareRequest& r);
CompareRequest compare_request_from_json(const json& j);

struct CompareCell {
  std::string variant;
  std::uint64_t seed = 0;
  json config;
};

struct VariantSummary {
  std::string name;
  std::string method;
  json settings;  // vary key -> value
  std::size_t steps = 0;
  bool complete = false;  // every cell has steps 1..N with finite metrics
  std::vector<double> median;  // median mean_reward per step
  std::vector<double> q1;
  std::vector<double> q3;
};

struct CompareResult {
  std::vector<VariantSummary> variants;
};

/// Expands the grid; throws ValidationError for < 2 variants, < 2 seeds, or a bad cell config.
std::vector<CompareCell> expand_grid(const CompareRequest& r);
CompareResult run_compare(const CompareRequest& r, const fs::path& out,
                          const std::vector<std::string>& argv, std::ostream& log);
/// First step (1-based) at which `curve` reaches `target`, or 0 if never.
std::size_t steps_to_reach(const std::vector<double>& curve, double target);
/// Linear-interpolated quantile of an unsorted sample.
double quantile(std::vector<double> values, double q);

struct CurateRequest {
  std::string corpus_path;
  std::string eval_path;
  std::string oracle_path;
  int ngram = 9;
  bool skip_passrate = false;
  PassrateOptions passrate;
};
json to_json(const CurateRequest& r);
CurateRequest curate_request_from_json(const json& j);

struct StageCount {
  std::string name;
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t removed = 0;
};

struct CurateReport {
  std::vector<StageCount> stages;
  std::vector<CorpusRecord> kept;
  std::vector<std::pair<std::string, Rejection>> rejected;  // (stage, rejection)
  std::size_t ties = 0;
  std::size_t verifier_errors = 0;
  json to_json() const;
};

CurateReport run_curate(const CurateRequest& r, const fs::path& out,
                        const std::vector<std::string>& argv, std::ostream& log);

struct GradcheckRequest {
  GradcheckOptions options;
};
json to_json(const GradcheckRequest& r);
GradcheckRequest gradcheck_request_from_json(const json& j);
/// Throws SuiteFailure when any suite fails (after writing the report).
GradcheckReport run_gradcheck_command(const GradcheckRequest& r, const fs::path& out,
                                      const std::vector<std::string>& argv, std::ostream& log);

struct OracleRequest {
  std::string corpus_path;
  ReferenceFitOptions fit;
};
json to_json(const OracleRequest& r);
OracleRequest oracle_request_from_json(const json& j);
/// Fits the oracle and writes <out>/oracle.json; returns that path.
fs::path run_oracle(const OracleRequest& r, const fs::path& out, const std::vector<std::string>& argv,
                    std::ostream& log);

/// Re-executes the run described by a manifest into `out`. With `check`, compares the
/// outputs byte-for-byte against the original run directory and throws SuiteFailure on
/// any difference.
void run_replay(const fs::path& manifest_path, const fs::path& out, bool check, std::ostream& log);

/// Files whose bytes must be identical between a run and its replay.
std::vector<fs::path> replay_artifacts(const Manifest& m, const fs::path& dir);

/// Entry point shared by the executable and tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cliplab::cli
