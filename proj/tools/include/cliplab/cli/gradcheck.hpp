#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "cliplab/objectives.hpp"

namespace cliplab::cli {

struct GradcheckOptions {
  std::uint64_t seed = 7;
  int instances = 100;
  double h = 1e-5;
  double tolerance = 1e-5;
  double eps_l = 0.2;
  double eps_h = 0.28;
  /// Betas used for the gppo_general instances (the beta = 1 reduction is checked separately).
  double beta1 = 0.5;
  double beta2 = 2.0;
  Normalization normalization = Normalization::TokenLevel;
  /// Deliberate bug to prove the suites can fail; empty for none. See kFaults.
  std::string fault;
};

inline constexpr const char* kFaults[] = {"gppo-upper-sign", "gppo-lower-sign", "cispo-upper-drop",
                                          "ppo-indicator"};

struct SuiteResult {
  std::string method;
  std::string suite;  // case_table | beta_reduction | fd_interior | fd_stopgrad
  int cases = 0;
  int failures = 0;
  double max_error = 0.0;  // abs for case tables, max-norm relative for finite differences
  std::string first_failure;

  bool passed() const { return failures == 0; }
};

struct GradcheckReport {
  std::vector<SuiteResult> suites;

  bool passed() const;
  /// Largest finite-difference relative error per method.
  double max_fd_error(Method m) const;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Throws ValidationError for an unknown fault name or bad tolerances.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

/// Coefficient table written directly from the case definitions, independent of grad_coeff.
TokenGradRecord reference_coefficient(double ratio, double advantage, const ClipConfig& cfg);

/**
 * Objective to maximize with the stop-gradient ratio frozen at the values the batch's
 * logp_old/model pair had when `frozen` was captured. Its exact gradient at the capture
 * point equals the case-table gradient of every method.
 */
struct FrozenBatch {
  std::vector<std::vector<std::vector<double>>> ratio0;  // [group][trajectory][token]
};
FrozenBatch freeze_ratios(std::span<const Group> groups, const PolicyModel& model);
double stopgrad_objective(std::span<const Group> groups, const PolicyModel& model,
                          const ClipConfig& cfg, const FrozenBatch& frozen);

}  // namespace cliplab::cli
