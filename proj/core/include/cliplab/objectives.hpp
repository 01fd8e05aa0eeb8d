#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cliplab/error.hpp"
#include "cliplab/policy.hpp"

namespace cliplab {

/**
 * Objective family.
 *
 *  ppo_clip      min(d A, clip(d, 1-e, 1+e) A), symmetric bound (eps_l == eps_h required)
 *  grpo_token    same table with the symmetric bound 1 +- eps_l (eps_h is not used)
 *  clip_higher   same table with the asymmetric bounds [1-eps_l, 1+eps_h]
 *  gppo          clip_higher forward value; clipped tokens keep coefficient 1-eps_l / 1+eps_h
 *  gppo_general  gppo with the clipped coefficients scaled by beta1 / beta2
 *  cispo         sg(clip(d)) A log pi; coefficient clipped on both advantage signs
 */
enum class Method { PpoClip, GrpoToken, ClipHigher, Gppo, GppoGeneral, Cispo };
enum class Normalization { SampleLevel, TokenLevel };
enum class ClipCase { Interior, Lower, Upper };

std::string_view to_string(Method m);
std::string_view to_string(Normalization n);
std::string_view to_string(ClipCase c);
Method parse_method(std::string_view text);
Normalization parse_normalization(std::string_view text);
inline constexpr Method kAllMethods[] = {Method::PpoClip, Method::GrpoToken,  Method::ClipHigher,
                                         Method::Gppo,    Method::GppoGeneral, Method::Cispo};

struct ClipConfig {
  double eps_l = 0.2;
  double eps_h = 0.28;
  double beta1 = 1.0;
  double beta2 = 1.0;
  Method method = Method::Gppo;
  Normalization normalization = Normalization::TokenLevel;
  /// Optional ceiling on gppo's unbounded interior coefficient (off by default).
  std::optional<double> gppo_cap;

  /// Throws ValidationError on a broken invariant.
  void validate() const;
  double lower_bound() const;  // 1 - eps_l
  double upper_bound() const;  // 1 + eps_h, or 1 + eps_l for grpo_token
};

struct GaeConfig {
  double gamma = 1.0;
  double lambda = 1.0;
  void validate() const;
};

/// Per-token gradient bookkeeping: the token contributes -F * A * phi / normalizer
/// to the gradient of the minimized loss.
struct TokenGradRecord {
  double ratio = 1.0;
  double advantage = 0.0;
  double coefficient = 1.0;
  ClipCase clipped_case = ClipCase::Interior;
  double entropy = 0.0;
  bool capped = false;
};

/// exp(logp_new - logp_old). Throws RatioOverflow when the exponent exceeds 700.
double importance_ratio(double logp_new, double logp_old, TokenLocation where = {});

/// Generalized advantage estimates; `values` holds V(s_1..s_T) plus the bootstrap V(s_{T+1}).
std::vector<double> gae(std::span<const double> rewards, std::span<const double> values,
                        const GaeConfig& cfg);

struct GroupAdvantage {
  double mean = 0.0;
  double stddev = 0.0;  // population (1/M)
  std::vector<double> advantages;
  bool degenerate = false;
};

/// (R - mean) / std with population std; all-zero and degenerate when std == 0.
GroupAdvantage group_advantage(std::span<const double> rewards);
/// Fills mean/stddev/advantages/degenerate of `group` from group.rewards.
void assign_advantages(Group& group);

/// Per-token objective value for the min/clip family (every method except cispo).
double forward_token_objective(double ratio, double advantage, const ClipConfig& cfg);

TokenGradRecord grad_coeff_ppo_clip(double ratio, double advantage, double eps);
/// The PPO indicator table with explicit bounds [lower, upper]; shared by grpo_token and clip_higher.
TokenGradRecord grad_coeff_clipped(double ratio, double advantage, double lower, double upper);
TokenGradRecord grad_coeff_gppo(double ratio, double advantage, const ClipConfig& cfg);
TokenGradRecord grad_coeff_gppo_general(double ratio, double advantage, const ClipConfig& cfg);
TokenGradRecord grad_coeff_cispo(double ratio, double advantage, const ClipConfig& cfg);
/// Dispatch on cfg.method.
TokenGradRecord grad_coeff(double ratio, double advantage, const ClipConfig& cfg);

using CoefficientFn = std::function<TokenGradRecord(double ratio, double advantage,
                                                    const ClipConfig& cfg)>;

struct SurrogateOptions {
  bool collect_records = false;
  /// Replaces grad_coeff; used by the gradient-check suite for fault injection.
  CoefficientFn coefficient;
};

struct TokenKey {
  std::size_t group = 0;
  std::size_t trajectory = 0;
  std::size_t token = 0;
};

struct SurrogateResult {
  double objective = 0.0;  // value to maximize
  double loss = 0.0;       // -objective
  std::vector<double> gradient;  // d loss / d theta
  std::vector<TokenGradRecord> records;
  std::vector<TokenKey> record_keys;
  std::size_t token_count = 0;
  std::size_t lower_clipped = 0;
  std::size_t upper_clipped = 0;
  std::size_t capped = 0;
  double entropy_sum = 0.0;  // policy entropy summed over tokens
};

/**
 * Forward objective and analytic gradient of a batch of groups under `model`.
 *
 * token_level: each token weighted 1 / (total tokens in the batch).
 * sample_level: each token weighted 1 / (trajectories in the batch * its trajectory length).
 * Gradient is sum(weight * F * A * phi), negated for minimization. Throws InvalidInput for
 * an empty batch; RatioOverflow carries the offending token's location.
 */
SurrogateResult surrogate_batch(std::span<const Group> groups, const PolicyModel& model,
                                const ClipConfig& cfg, const SurrogateOptions& options = {});
/// Same, writing into `out` and reusing its buffers.
void surrogate_batch(std::span<const Group> groups, const PolicyModel& model,
                     const ClipConfig& cfg, const SurrogateOptions& options, SurrogateResult& out);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> gradient;
};

struct SftResult {
  double loss = 0.0;
  std::vector<double> gradient;
  std::size_t token_count = 0;
  bool empty = false;  // no positives: zero loss and gradient
};

/// Token-level mean negative log-likelihood over all tokens of `positives`.
SftResult sft_loss(std::span<const Trajectory* const> positives, const PolicyModel& model);
SftResult sft_loss(std::span<const Trajectory> positives, const PolicyModel& model);
void sft_loss(std::span<const Trajectory* const> positives, const PolicyModel& model,
              SftResult& out);

/// rl + alpha * sft, values and gradients. Throws InvalidInput for alpha < 0.
LossAndGrad combined_loss(const LossAndGrad& rl, const LossAndGrad& sft, double alpha);

struct ZeroAdvantageFilter {
  std::vector<Group> kept;
  std::size_t dropped = 0;
};

/// Drops degenerate groups, preserving the order of the survivors.
ZeroAdvantageFilter filter_zero_advantage(std::span<const Group> groups);

// Line-delimited token-gradient records tagged "cliplab.tokengrad.v1".
inline constexpr std::string_view kTokenGradFormat = "cliplab.tokengrad.v1";
void write_token_grad_records(std::ostream& out, std::uint64_t step,
                              std::span<const Group> groups, const SurrogateResult& result);

}  // namespace cliplab
