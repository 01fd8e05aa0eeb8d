#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cliplab/envs.hpp"
#include "cliplab/numerics.hpp"

namespace cliplab {

/// Padding symbol for window slots before the start of the sequence.
inline constexpr int kPadToken = -1;

/**
 * State s_t seen by a policy: the trailing `window` tokens of prompt+response
 * (oldest first, kPadToken-padded), plus a hash of the full prompt and the
 * position within the response for prompt-conditioned lookups.
 */
struct Context {
  std::uint64_t prompt_key = 0;
  std::uint32_t position = 0;
  std::vector<int> window;

  bool operator==(const Context&) const = default;
};

std::uint64_t prompt_key(std::span<const int> prompt);
Context make_context(std::span<const int> prompt, std::span<const int> response_prefix,
                     int window);

enum class ModelKind { Tabular, Feedforward };
std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

struct ModelShape {
  ModelKind kind = ModelKind::Tabular;
  int vocab_size = vocab::kSize;
  int context_window = 2;
  /// Tabular only: rows of the prompt-conditioned table (0 disables it).
  std::size_t prompt_rows = 0;
  /// Feedforward only: width of the tanh hidden layer.
  int hidden = 16;

  void validate() const;
  bool operator==(const ModelShape&) const = default;
};

/**
 * Token policy with exact log-probabilities and hand-written backprop.
 *
 * Tabular: logits(s) = shared[row(window)] + P[h1(prompt, position, window)] + P[h2(...)],
 * where row(window) is the exact base-(V+1) index of the trailing window and P is the
 * prompt table, present only when prompt_rows > 0. Two independent hashes keep a
 * collision in one slot from pinning a context. All terms are plain parameter rows,
 * so phi at the logit layer is onehot(a) - pi scattered into each of them.
 *
 * Feedforward: logits = W2 tanh(W1 x + b1) + b2 with x the concatenated one-hot
 * encoding of the window (V+1 symbols per slot, the extra one for padding).
 */
class PolicyModel {
 public:
  static PolicyModel tabular(int vocab_size, int context_window, std::size_t prompt_rows = 0);
  /// Weights uniform in [-0.05, 0.05] from `init`.
  static PolicyModel feedforward(int vocab_size, int context_window, int hidden,
                                 SeededRng& init);
  static PolicyModel from_shape(const ModelShape& shape, SeededRng& init);

  const ModelShape& shape() const noexcept { return shape_; }
  ModelKind kind() const noexcept { return shape_.kind; }
  int vocab_size() const noexcept { return shape_.vocab_size; }
  int context_window() const noexcept { return shape_.context_window; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  std::span<const double> parameters() const noexcept { return params_; }
  std::span<double> mutable_parameters() noexcept { return params_; }

  std::vector<double> logits(const Context& ctx) const;
  std::vector<double> log_probs(const Context& ctx) const;
  ProbDist distribution(const Context& ctx) const;
  /// log pi(action | ctx). Throws InvalidInput for an out-of-range action.
  double logprob(const Context& ctx, int action) const;

  /// grad += scale * phi(action, ctx), where phi = d log pi(action|ctx) / d theta.
  void accumulate_grad(const Context& ctx, int action, double scale,
                       std::span<double> grad) const;
  /// scale * phi(action, ctx) as a dense parameter vector.
  std::vector<double> backprop_token(const Context& ctx, int action, double scale) const;

  bool operator==(const PolicyModel&) const = default;

 private:
  PolicyModel(ModelShape shape, std::vector<double> params);

  std::size_t shared_row(const Context& ctx) const;
  std::array<std::size_t, 2> prompt_rows(const Context& ctx) const;
  std::size_t shared_rows() const;
  void check_context(const Context& ctx) const;

  // Feedforward helpers.
  std::size_t input_dim() const;
  void forward_hidden(const Context& ctx, std::vector<double>& hidden) const;

  ModelShape shape_;
  std::vector<double> params_;
};

enum class Termination { AnswerEmitted, MaxLength };
std::string_view to_string(Termination t);

/// One sampled response.
struct Trajectory {
  std::string prompt_id;
  std::vector<int> tokens;
  std::vector<Context> contexts;
  std::vector<double> logp_old;  // behavior-policy log-probs at temperature 1
  double reward = 0.0;
  Termination terminated = Termination::MaxLength;
  /// passes/total reported by the verifier (1 or 0 for binary tasks).
  double pass_fraction = 0.0;
  /// Optional per-token advantages (e.g. from GAE); when empty the group advantage applies.
  std::vector<double> token_advantages;

  std::size_t length() const noexcept { return tokens.size(); }
};

/// The M responses sampled for one prompt, with rewards and normalized advantages.
struct Group {
  std::string prompt_id;
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> advantages;
  bool degenerate = false;

  std::size_t token_count() const;
};

/**
 * Samples M responses to `task`. Tokens are drawn from softmax(logits / temperature);
 * logp_old is always recorded at temperature 1. Each response stops when the task's
 * answer region is complete or at max_len. Rewards and advantages are left unset.
 */
Group sample_group(const PolicyModel& model, const TaskSpec& task, int group_size, int max_len,
                   double temperature, SeededRng& rng);

/// Teacher-forced trajectory for a fixed response (logp_old from `model`).
Trajectory score_response_tokens(const PolicyModel& model, const TaskSpec& task,
                                 std::span<const int> response);

enum class OptimizerKind { Sgd, Adam };
std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const OptimizerConfig&) const = default;
};

struct OptimizerState {
  OptimizerConfig config;
  std::uint64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t rejected_updates = 0;

  bool operator==(const OptimizerState&) const = default;
};

OptimizerState make_optimizer_state(const OptimizerConfig& config, std::size_t parameter_count);

/**
 * theta <- theta - lr * step(gradient). `gradient` is the gradient of the loss being
 * minimized. A gradient with a non-finite entry leaves model and state untouched,
 * increments rejected_updates, and throws UpdateRejected.
 */
void apply_update(PolicyModel& model, std::span<const double> gradient, OptimizerState& state,
                  double lr);

// Checkpoints: a single JSON document tagged "cliplab.checkpoint.v1". Parameters are
// written as IEEE-754 bit patterns in hex so save/load is bit-exact.
inline constexpr std::string_view kCheckpointFormat = "cliplab.checkpoint.v1";

struct Checkpoint {
  PolicyModel model;
  OptimizerState optimizer;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_stream = 0;
  std::string rng_algorithm{SeededRng::kAlgorithm};
  std::uint64_t step = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

}  // namespace cliplab
