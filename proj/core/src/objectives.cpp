#include "cliplab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <ostream>

#include "cliplab/error.hpp"

namespace cliplab {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::PpoClip: return "ppo_clip";
    case Method::GrpoToken: return "grpo_token";
    case Method::ClipHigher: return "clip_higher";
    case Method::Gppo: return "gppo";
    case Method::GppoGeneral: return "gppo_general";
    case Method::Cispo: return "cispo";
  }
  return "?";
}

std::string_view to_string(Normalization n) {
  return n == Normalization::TokenLevel ? "token_level" : "sample_level";
}

std::string_view to_string(ClipCase c) {
  switch (c) {
    case ClipCase::Interior: return "interior";
    case ClipCase::Lower: return "lower";
    case ClipCase::Upper: return "upper";
  }
  return "?";
}

Method parse_method(std::string_view text) {
  for (Method m : kAllMethods) {
    if (to_string(m) == text) return m;
  }
  throw InvalidInput("unknown method '" + std::string(text) + "'");
}

Normalization parse_normalization(std::string_view text) {
  if (text == "token_level") return Normalization::TokenLevel;
  if (text == "sample_level") return Normalization::SampleLevel;
  throw InvalidInput("unknown normalization '" + std::string(text) + "'");
}

void ClipConfig::validate() const {
  if (!(eps_l > 0.0 && eps_l < 1.0)) throw ValidationError("objective: eps_l must lie in (0, 1)");
  if (!(eps_h > 0.0)) throw ValidationError("objective: eps_h must be positive");
  if (!(beta1 > 0.0 && beta2 > 0.0)) throw ValidationError("objective: beta1, beta2 must be positive");
  if (method == Method::PpoClip && eps_l != eps_h) {
    throw ValidationError("objective: ppo_clip uses a symmetric bound (eps_l == eps_h)");
  }
  if (gppo_cap && !(*gppo_cap > 0.0)) throw ValidationError("objective: gppo_cap must be positive");
}

double ClipConfig::lower_bound() const { return 1.0 - eps_l; }

double ClipConfig::upper_bound() const {
  return method == Method::GrpoToken ? 1.0 + eps_l : 1.0 + eps_h;
}

void GaeConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("gae: gamma must lie in [0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("gae: lambda must lie in [0, 1]");
}

double importance_ratio(double logp_new, double logp_old, TokenLocation where) {
  if (!std::isfinite(logp_new) || !std::isfinite(logp_old) || logp_new > 0.0 || logp_old > 0.0) {
    throw InvalidInput("importance_ratio: log-probabilities must be finite and <= 0");
  }
  const double diff = logp_new - logp_old;
  if (diff > 700.0) {
    throw RatioOverflow(where, "importance ratio overflow at group " + std::to_string(where.group) +
                                   ", trajectory " + std::to_string(where.trajectory) +
                                   ", token " + std::to_string(where.token));
  }
  return std::exp(diff);
}

std::vector<double> gae(std::span<const double> rewards, std::span<const double> values,
                        const GaeConfig& cfg) {
  cfg.validate();
  if (values.size() != rewards.size() + 1) {
    throw InvalidInput("gae: values must hold one entry per step plus the bootstrap value");
  }
  std::vector<double> adv(rewards.size());
  double running = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    const double td = rewards[i] + cfg.gamma * values[i + 1] - values[i];
    running = td + cfg.gamma * cfg.lambda * running;
    adv[i] = running;
  }
  return adv;
}

GroupAdvantage group_advantage(std::span<const double> rewards) {
  if (rewards.size() < 2) throw InvalidInput("group_advantage: need at least two rewards");
  GroupAdvantage out;
  const double m = static_cast<double>(rewards.size());
  double sum = 0.0;
  for (double r : rewards) sum += r;
  out.mean = sum / m;
  double ss = 0.0;
  for (double r : rewards) ss += (r - out.mean) * (r - out.mean);
  out.stddev = std::sqrt(ss / m);
  out.advantages.assign(rewards.size(), 0.0);
  const bool all_equal = std::all_of(rewards.begin(), rewards.end(),
                                     [&](double r) { return r == rewards.front(); });
  if (all_equal || out.stddev == 0.0) {
    out.stddev = 0.0;
    out.degenerate = true;
    return out;
  }
  for (std::size_t j = 0; j < rewards.size(); ++j) {
    out.advantages[j] = (rewards[j] - out.mean) / out.stddev;
  }
  return out;
}

void assign_advantages(Group& group) {
  GroupAdvantage a = group_advantage(group.rewards);
  group.mean = a.mean;
  group.stddev = a.stddev;
  group.advantages = std::move(a.advantages);
  group.degenerate = a.degenerate;
}

double forward_token_objective(double ratio, double advantage, const ClipConfig& cfg) {
  if (!(ratio > 0.0)) throw InvalidInput("forward_token_objective: ratio must be positive");
  const double lo = cfg.lower_bound();
  const double hi = cfg.upper_bound();
  switch (cfg.method) {
    case Method::PpoClip:
    case Method::GrpoToken:
    case Method::ClipHigher:
    case Method::Gppo:
      return std::min(ratio * advantage, std::clamp(ratio, lo, hi) * advantage);
    case Method::GppoGeneral:
      if (ratio < lo && advantage < 0.0) return cfg.beta1 * lo * advantage;
      if (ratio > hi && advantage > 0.0) return cfg.beta2 * hi * advantage;
      return ratio * advantage;
    case Method::Cispo:
      throw InvalidInput("forward_token_objective: cispo's forward value needs log pi; use surrogate_batch");
  }
  throw InvalidInput("forward_token_objective: unknown method");
}

TokenGradRecord grad_coeff_clipped(double ratio, double advantage, double lower, double upper) {
  if (!(ratio > 0.0)) throw InvalidInput("grad_coeff: ratio must be positive");
  TokenGradRecord rec{ratio, advantage, ratio, ClipCase::Interior, 0.0, false};
  // Indicator is 1 iff ratio*A <= clip(ratio)*A.
  if (advantage > 0.0 && ratio > upper) {
    rec.coefficient = 0.0;
    rec.clipped_case = ClipCase::Upper;
  } else if (advantage < 0.0 && ratio < lower) {
    rec.coefficient = 0.0;
    rec.clipped_case = ClipCase::Lower;
  }
  return rec;
}

TokenGradRecord grad_coeff_ppo_clip(double ratio, double advantage, double eps) {
  return grad_coeff_clipped(ratio, advantage, 1.0 - eps, 1.0 + eps);
}

namespace {

TokenGradRecord gppo_table(double ratio, double advantage, const ClipConfig& cfg, double b1,
                           double b2) {
  if (!(ratio > 0.0)) throw InvalidInput("grad_coeff: ratio must be positive");
  const double lo = cfg.lower_bound();
  const double hi = cfg.upper_bound();
  TokenGradRecord rec{ratio, advantage, ratio, ClipCase::Interior, 0.0, false};
  if (ratio < lo && advantage < 0.0) {
    rec.coefficient = b1 * lo;
    rec.clipped_case = ClipCase::Lower;
  } else if (ratio > hi && advantage > 0.0) {
    rec.coefficient = b2 * hi;
    rec.clipped_case = ClipCase::Upper;
  } else if (cfg.gppo_cap && rec.coefficient > *cfg.gppo_cap) {
    rec.coefficient = *cfg.gppo_cap;
    rec.capped = true;
  }
  return rec;
}

}  // namespace

TokenGradRecord grad_coeff_gppo(double ratio, double advantage, const ClipConfig& cfg) {
  return gppo_table(ratio, advantage, cfg, 1.0, 1.0);
}

TokenGradRecord grad_coeff_gppo_general(double ratio, double advantage, const ClipConfig& cfg) {
  return gppo_table(ratio, advantage, cfg, cfg.beta1, cfg.beta2);
}

TokenGradRecord grad_coeff_cispo(double ratio, double advantage, const ClipConfig& cfg) {
  if (!(ratio > 0.0)) throw InvalidInput("grad_coeff: ratio must be positive");
  const double lo = cfg.lower_bound();
  const double hi = cfg.upper_bound();
  TokenGradRecord rec{ratio, advantage, ratio, ClipCase::Interior, 0.0, false};
  // The weight sg(clip(ratio)) does not depend on the advantage sign.
  if (ratio < lo) {
    rec.coefficient = lo;
    rec.clipped_case = ClipCase::Lower;
  } else if (ratio > hi) {
    rec.coefficient = hi;
    rec.clipped_case = ClipCase::Upper;
  }
  return rec;
}

TokenGradRecord grad_coeff(double ratio, double advantage, const ClipConfig& cfg) {
  switch (cfg.method) {
    case Method::PpoClip:
    case Method::GrpoToken:
    case Method::ClipHigher:
      return grad_coeff_clipped(ratio, advantage, cfg.lower_bound(), cfg.upper_bound());
    case Method::Gppo: return grad_coeff_gppo(ratio, advantage, cfg);
    case Method::GppoGeneral: return grad_coeff_gppo_general(ratio, advantage, cfg);
    case Method::Cispo: return grad_coeff_cispo(ratio, advantage, cfg);
  }
  throw InvalidInput("grad_coeff: unknown method");
}

SurrogateResult surrogate_batch(std::span<const Group> groups, const PolicyModel& model,
                                const ClipConfig& cfg, const SurrogateOptions& options) {
  SurrogateResult out;
  surrogate_batch(groups, model, cfg, options, out);
  return out;
}

void surrogate_batch(std::span<const Group> groups, const PolicyModel& model,
                     const ClipConfig& cfg, const SurrogateOptions& options,
                     SurrogateResult& out) {
  cfg.validate();
  std::size_t total_tokens = 0;
  std::size_t total_trajectories = 0;
  for (const Group& g : groups) {
    if (g.advantages.size() != g.trajectories.size()) {
      throw InvalidInput("surrogate_batch: group advantages not assigned");
    }
    total_tokens += g.token_count();
    total_trajectories += g.trajectories.size();
  }
  if (total_tokens == 0) throw InvalidInput("surrogate_batch: empty batch");

  std::vector<double> gradient = std::move(out.gradient);
  std::vector<TokenGradRecord> records = std::move(out.records);
  std::vector<TokenKey> keys = std::move(out.record_keys);
  out = SurrogateResult{};
  out.gradient = std::move(gradient);
  out.gradient.assign(model.parameter_count(), 0.0);
  out.records = std::move(records);
  out.records.clear();
  out.record_keys = std::move(keys);
  out.record_keys.clear();
  out.token_count = total_tokens;
  const bool token_level = cfg.normalization == Normalization::TokenLevel;

  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& g = groups[gi];
    for (std::size_t j = 0; j < g.trajectories.size(); ++j) {
      const Trajectory& traj = g.trajectories[j];
      if (traj.logp_old.size() != traj.tokens.size() || traj.contexts.size() != traj.tokens.size()) {
        throw InvalidInput("surrogate_batch: trajectory is missing logp_old or contexts");
      }
      const bool per_token_adv = !traj.token_advantages.empty();
      if (per_token_adv && traj.token_advantages.size() != traj.tokens.size()) {
        throw InvalidInput("surrogate_batch: token advantage length mismatch");
      }
      const double weight =
          token_level ? 1.0 / static_cast<double>(total_tokens)
                      : 1.0 / (static_cast<double>(total_trajectories) *
                               static_cast<double>(traj.length()));
      for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
        const TokenLocation where{gi, j, t};
        const int action = traj.tokens[t];
        const std::vector<double> logp = model.log_probs(traj.contexts[t]);
        const double logp_new = logp[static_cast<std::size_t>(action)];
        const double ratio = importance_ratio(logp_new, traj.logp_old[t], where);
        const double adv = per_token_adv ? traj.token_advantages[t] : g.advantages[j];

        TokenGradRecord rec = options.coefficient ? options.coefficient(ratio, adv, cfg)
                                                  : grad_coeff(ratio, adv, cfg);
        double value;
        if (cfg.method == Method::Cispo) {
          value = rec.coefficient * adv * logp_new;
        } else {
          value = forward_token_objective(ratio, adv, cfg);
        }
        out.objective += weight * value;
        if (rec.clipped_case == ClipCase::Lower) ++out.lower_clipped;
        if (rec.clipped_case == ClipCase::Upper) ++out.upper_clipped;
        if (rec.capped) ++out.capped;

        model.accumulate_grad(traj.contexts[t], action, -weight * rec.coefficient * adv,
                              out.gradient);
        double h = 0.0;
        for (double lp : logp) h -= std::exp(lp) * lp;
        rec.entropy = h;
        out.entropy_sum += h;
        if (options.collect_records) {
          out.records.push_back(rec);
          out.record_keys.push_back({gi, j, t});
        }
      }
    }
  }
  out.loss = -out.objective;
}

SftResult sft_loss(std::span<const Trajectory* const> positives, const PolicyModel& model) {
  SftResult out;
  sft_loss(positives, model, out);
  return out;
}

void sft_loss(std::span<const Trajectory* const> positives, const PolicyModel& model,
              SftResult& out) {
  std::vector<double> gradient = std::move(out.gradient);
  out = SftResult{};
  out.gradient = std::move(gradient);
  out.gradient.assign(model.parameter_count(), 0.0);
  for (const Trajectory* t : positives) out.token_count += t->length();
  if (out.token_count == 0) {
    out.empty = true;
    return;
  }
  const double w = 1.0 / static_cast<double>(out.token_count);
  for (const Trajectory* traj : positives) {
    for (std::size_t t = 0; t < traj->tokens.size(); ++t) {
      out.loss -= w * model.logprob(traj->contexts[t], traj->tokens[t]);
      model.accumulate_grad(traj->contexts[t], traj->tokens[t], -w, out.gradient);
    }
  }
}

SftResult sft_loss(std::span<const Trajectory> positives, const PolicyModel& model) {
  std::vector<const Trajectory*> ptrs;
  ptrs.reserve(positives.size());
  for (const Trajectory& t : positives) ptrs.push_back(&t);
  return sft_loss(ptrs, model);
}

LossAndGrad combined_loss(const LossAndGrad& rl, const LossAndGrad& sft, double alpha) {
  if (!(alpha >= 0.0)) throw InvalidInput("combined_loss: alpha must be non-negative");
  if (rl.gradient.size() != sft.gradient.size()) {
    throw InvalidInput("combined_loss: gradient sizes differ");
  }
  LossAndGrad out{rl.loss + alpha * sft.loss, rl.gradient};
  axpy(alpha, sft.gradient, out.gradient);
  return out;
}

ZeroAdvantageFilter filter_zero_advantage(std::span<const Group> groups) {
  ZeroAdvantageFilter out;
  for (const Group& g : groups) {
    if (g.degenerate) {
      ++out.dropped;
    } else {
      out.kept.push_back(g);
    }
  }
  return out;
}

void write_token_grad_records(std::ostream& out, std::uint64_t step,
                              std::span<const Group> groups, const SurrogateResult& result) {
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    const TokenGradRecord& r = result.records[i];
    const TokenKey& k = result.record_keys[i];
    nlohmann::json j = {
        {"format", kTokenGradFormat},
        {"step", step},
        {"prompt_id", groups[k.group].prompt_id},
        {"trajectory", k.trajectory},
        {"token", k.token},
        {"ratio", r.ratio},
        {"advantage", r.advantage},
        {"coefficient", r.coefficient},
        {"case", to_string(r.clipped_case)},
        {"entropy", r.entropy},
    };
    if (r.capped) j["capped"] = true;
    out << j.dump() << '\n';
  }
}

}  // namespace cliplab
