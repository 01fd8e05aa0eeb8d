#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cliplab/envs.hpp"
#include "cliplab/policy.hpp"

namespace cliplab {

/// A corpus entry: the task (prompt, kind, answer, check_count, difficulty) plus provenance.
struct CorpusRecord {
  TaskSpec task;
  std::string source;

  const std::string& id() const noexcept { return task.id; }
  const std::vector<int>& prompt_tokens() const noexcept { return task.prompt_tokens; }
};

struct Rejection {
  CorpusRecord record;
  std::string reason;
};

struct DedupResult {
  std::vector<CorpusRecord> kept;
  std::vector<Rejection> removed;
};

/// Keeps the first record for each distinct prompt token sequence; stable.
DedupResult exact_dedup(std::span<const CorpusRecord> corpus);

struct NgramResult {
  std::vector<CorpusRecord> kept;
  std::vector<Rejection> rejected;
};

/// Rejects a record iff some contiguous n-token window of its prompt occurs contiguously
/// in an eval sequence. Prompts shorter than n are always kept.
NgramResult ngram_filter(std::span<const CorpusRecord> corpus,
                         std::span<const std::vector<int>> eval_set, int n = 9);

struct PassrateOptions {
  int k = 16;
  double threshold = 0.5;  // keep iff fraction of fully passing rollouts > threshold
  int min_checks = 16;     // multi_check_code records below this are rejected outright
  int max_len = 24;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct PassStats {
  std::string id;
  int rollouts = 0;
  int full_passes = 0;
  double fraction = 0.0;
  std::string outcome;  // kept | below_threshold | tie | too_few_checks | verifier_error
};

struct PassrateResult {
  std::vector<CorpusRecord> kept;
  std::vector<Rejection> rejected;
  std::vector<PassStats> stats;
  std::size_t ties = 0;
  std::size_t verifier_errors = 0;
};

/**
 * Rollout-based quality filter. Each record gets `k` rollouts from `oracle`
 * on an RNG stream keyed by its id; a rollout fully passes when every check passes
 * (code) or the binary verifier returns +1 (math).
 */
PassrateResult passrate_filter(std::span<const CorpusRecord> corpus, const PolicyModel& oracle,
                               const PassrateOptions& options = {});

struct ReferenceFitOptions {
  ModelShape shape{ModelKind::Tabular, vocab::kSize, 2, std::size_t{1} << 16, 16};
  int steps = 300;
  double lr = 0.1;  // Adam step size
  std::uint64_t seed = 0;
};

/// Fits a policy to the reference responses of `tasks` by full-batch NLL with Adam.
/// Used to build an oracle for passrate_filter.
PolicyModel fit_reference_policy(std::span<const TaskSpec> tasks,
                                 const ReferenceFitOptions& options = {});

// Line-delimited corpus records tagged "cliplab.corpus.v1".
inline constexpr std::string_view kCorpusFormat = "cliplab.corpus.v1";
std::string corpus_record_to_json_line(const CorpusRecord& rec);
CorpusRecord corpus_record_from_json_line(std::string_view line);
void write_corpus(std::ostream& out, std::span<const CorpusRecord> corpus);
std::vector<CorpusRecord> read_corpus(std::istream& in);

/// Eval sets are line-delimited: either corpus/task records or bare JSON token arrays.
std::vector<std::vector<int>> read_eval_set(std::istream& in);

}  // namespace cliplab
