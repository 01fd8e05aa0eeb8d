#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cliplab/envs.hpp"
#include "cliplab/objectives.hpp"
#include "cliplab/policy.hpp"

namespace cliplab {

struct TaskConfig {
  TaskKind kind = TaskKind::BinaryMath;
  Difficulty difficulty = Difficulty::Easy;
  /// Number of distinct prompts generated for training; each step draws
  /// global_batch_prompts of them without replacement.
  int pool_size = 32;
  TaskGenOptions gen;
};

/// Optional supervised warm start on well-formed demonstrations whose answer digits
/// are correct with probability demo_accuracy (otherwise uniformly random).
struct WarmStartConfig {
  int steps = 0;
  double demo_accuracy = 0.0;
  double lr = 1.0;
};

struct TrainConfig {
  ClipConfig clip;
  int group_size = 8;
  int global_batch_prompts = 32;
  int minibatch_prompts = 8;
  int epochs_per_rollout = 1;
  double lr = 0.05;
  double sft_alpha = 0.1;
  int max_len = 8;
  double temperature = 1.0;
  bool zero_adv_filter = false;
  RewardMode reward_mode = RewardMode::Binary;
  std::uint64_t seed = 1;
  int total_steps = 200;
  int checkpoint_interval = 0;
  int threads = 1;
  bool record_token_grads = false;
  std::string init_checkpoint;
  ModelShape model{ModelKind::Tabular, vocab::kSize, 2, std::size_t{1} << 14, 16};
  OptimizerConfig optimizer;
  TaskConfig task;
  WarmStartConfig warmstart;

  /// Throws ValidationError on any broken invariant.
  void validate() const;
};

inline constexpr std::string_view kConfigFormat = "cliplab.config.v1";
nlohmann::json to_json(const TrainConfig& cfg);
/// Reads a (possibly partial) config document over the defaults. Unknown keys are errors.
TrainConfig train_config_from_json(const nlohmann::json& doc);

/// Metrics for one parameter update inside update_phase.
struct UpdateMetrics {
  int epoch = 0;
  int minibatch = 0;
  double loss = 0.0;
  double rl_loss = 0.0;
  double sft_loss = 0.0;
  double grad_norm = 0.0;
  double entropy_sum = 0.0;
  std::size_t tokens = 0;
  std::size_t lower_clipped = 0;
  std::size_t upper_clipped = 0;
  std::size_t capped = 0;
  std::size_t sft_tokens = 0;
  bool aborted = false;
};

/// One record per training step.
struct StepMetrics {
  int step = 0;
  double loss = 0.0;
  double mean_reward = 0.0;
  double reward_variance = 0.0;       // population variance of the step's rewards
  double reward_variance_unit = 0.0;  // same, after mapping the reward range onto [0, 1]
  double mean_pass_rate = 0.0;        // mean passes/total
  double grad_norm = 0.0;
  double mean_entropy = 0.0;
  double clip_lower_frac = 0.0;
  double clip_upper_frac = 0.0;
  double sft_loss = 0.0;
  double mean_response_length = 0.0;
  int zero_adv_groups = 0;
  int updates = 0;
  int aborted_updates = 0;
  std::size_t capped_tokens = 0;
  std::size_t tokens = 0;
};

inline constexpr std::string_view kMetricsFormat = "cliplab.metrics.v1";
nlohmann::json to_json(const StepMetrics& m);
StepMetrics step_metrics_from_json(const nlohmann::json& j);

/// Deterministic training prompt pool for a config.
std::vector<TaskSpec> make_task_pool(const TrainConfig& cfg);

/// One group per prompt, rewards from the configured verifier, logp_old frozen from `model`.
/// Prompt i samples on its own RNG stream, so results do not depend on cfg.threads.
std::vector<Group> rollout_phase(const PolicyModel& model, std::span<const TaskSpec> prompts,
                                 const TrainConfig& cfg, std::uint64_t step);

struct UpdateResult {
  std::vector<UpdateMetrics> updates;
  std::size_t zero_adv_groups = 0;
};

/**
 * Optional zero-advantage filtering, then for each epoch and each minibatch of
 * minibatch_prompts groups: surrogate_batch + sft_alpha * sft_loss (trajectories with
 * positive advantage) against the current model, followed by one apply_update.
 * A non-finite loss or gradient aborts that update and leaves the model unchanged.
 */
UpdateResult update_phase(std::span<const Group> groups, PolicyModel& model,
                          OptimizerState& optimizer, const TrainConfig& cfg,
                          std::uint64_t step = 0, std::ostream* token_grads = nullptr);

/// Runs the supervised warm start in place.
void warm_start(PolicyModel& model, std::span<const TaskSpec> pool, const TrainConfig& cfg);

struct TrainOptions {
  std::optional<std::filesystem::path> run_dir;
};

struct TrainResult {
  std::vector<StepMetrics> history;
  Checkpoint final_checkpoint;
};

/**
 * total_steps iterations of rollout_phase -> update_phase. With a run directory,
 * writes config.json, metrics.jsonl (streamed), optional tokengrads.jsonl,
 * checkpoint-<step>.json every checkpoint_interval steps, and checkpoint-final.json.
 */
TrainResult train(const TrainConfig& cfg, const TrainOptions& options = {});

/// Aggregates the per-update metrics of one step.
StepMetrics summarize_step(int step, std::span<const Group> groups, const UpdateResult& update,
                           RewardMode mode);

}  // namespace cliplab
