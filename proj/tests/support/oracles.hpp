#pragma once

// Reference implementations written straight from the defining formulas. They share no
// code with the library beyond the model's log-probabilities, and favour clarity over speed.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cliplab/objectives.hpp"
#include "cliplab/policy.hpp"

namespace cliplab::testing {

std::vector<double> softmax_ld(std::span<const double> logits);

/// Central differences with its own loop.
std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x, double h);

/// A_t = sum_l (gamma lambda)^l delta_{t+l}, summed directly.
std::vector<double> gae_direct(const std::vector<double>& rewards, const std::vector<double>& values,
                               double gamma, double lambda);

/// PPO indicator: 1 iff r A <= clip(r, lo, hi) A.
bool ppo_indicator(double r, double a, double lo, double hi);

/// F from the method's gradient table, written case by case.
double table_coefficient(Method m, double delta, double a, const ClipConfig& cfg);
ClipCase table_case(Method m, double delta, double a, const ClipConfig& cfg);

/// Forward objective (to maximize) by explicit loops; cispo uses the frozen-ratio form.
double forward_objective(std::span<const Group> groups, const PolicyModel& model, const ClipConfig& cfg);

/// Loss of the sg-form objective with ratios frozen at theta0 (F fixed per token), as a
/// function of theta. Its exact gradient equals the analytic gradient of any method.
double frozen_coefficient_loss(std::span<const Group> groups, const PolicyModel& model,
                               const ClipConfig& cfg, const std::vector<double>& coefficients);

/// Mean NLL over all tokens of the given trajectories.
double nll(std::span<const Trajectory> trajs, const PolicyModel& model);

/// True iff some n-window of `a` appears in `b` (brute force).
bool shares_window(const std::vector<int>& a, const std::vector<int>& b, int n);

struct RandomBatchOptions {
  int vocab_min = 2;
  int vocab_max = 5;
  int max_tokens = 6;
  bool feedforward = false;
  /// ratio draw: [lo, hi]
  double ratio_lo = 0.5;
  double ratio_hi = 1.6;
  bool degenerate_groups = false;
};

struct RandomBatch {
  PolicyModel model;
  std::vector<Group> groups;
};

/// Random small model and batch with logp_old placed so each token's ratio is drawn from
/// [ratio_lo, ratio_hi]. Rewards are binary; with degenerate_groups some groups share one reward.
RandomBatch random_batch(SeededRng& rng, const RandomBatchOptions& options = {});

/// Rebuild a model with new parameters (same shape).
PolicyModel with_parameters(const PolicyModel& model, const std::vector<double>& theta);

}  // namespace cliplab::testing
