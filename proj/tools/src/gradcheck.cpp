#include "cliplab/cli/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cliplab/error.hpp"

namespace cliplab::cli {

namespace {

struct Instance {
  PolicyModel model;
  std::vector<Group> groups;
};

enum class Regime { Interior, Mixed };

constexpr double kBoundaryMargin = 0.02;

// A batch of at most 6 tokens over a random small tabular policy. logp_old is set so
// each token's ratio is a chosen value: inside the clip range, or anywhere in
// [0.4, 1.8] away from the clip points.
Instance make_instance(SeededRng& rng, const ClipConfig& cfg, Regime regime) {
  const int vocab = 2 + static_cast<int>(rng.uniform_index(4));
  const int window = 1 + static_cast<int>(rng.uniform_index(2));
  const std::size_t prompt_rows = rng.uniform() < 0.5 ? 0 : 7;
  PolicyModel model = PolicyModel::tabular(vocab, window, prompt_rows);
  for (double& p : model.mutable_parameters()) p = rng.uniform(-1.0, 1.0);

  const double lo = cfg.lower_bound();
  const double hi = cfg.upper_bound();
  auto draw_ratio = [&]() {
    for (;;) {
      const double d = regime == Regime::Interior
                           ? rng.uniform(lo + kBoundaryMargin, hi - kBoundaryMargin)
                           : rng.uniform(0.4, 1.8);
      if (std::abs(d - lo) > kBoundaryMargin && std::abs(d - hi) > kBoundaryMargin) return d;
    }
  };

  const std::size_t n_groups = 1 + rng.uniform_index(2);
  const std::size_t max_len = n_groups == 1 ? 3 : 1;
  std::vector<Group> groups;
  for (std::size_t g = 0; g < n_groups; ++g) {
    Group group;
    group.prompt_id = "gc-" + std::to_string(g);
    std::vector<int> prompt(2 + rng.uniform_index(2));
    for (int& t : prompt) t = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(vocab)));
    for (int j = 0; j < 2; ++j) {
      Trajectory traj;
      traj.prompt_id = group.prompt_id;
      const std::size_t len = 1 + rng.uniform_index(max_len);
      for (std::size_t t = 0; t < len; ++t) {
        Context ctx = make_context(prompt, traj.tokens, window);
        const int a = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(vocab)));
        const double lp = model.logprob(ctx, a);
        double old;
        do {
          old = lp - std::log(draw_ratio());
        } while (old > 0.0);
        traj.contexts.push_back(std::move(ctx));
        traj.tokens.push_back(a);
        traj.logp_old.push_back(old);
      }
      group.trajectories.push_back(std::move(traj));
      group.rewards.push_back(rng.uniform(-1.0, 1.0));
    }
    assign_advantages(group);
    groups.push_back(std::move(group));
  }
  return {std::move(model), std::move(groups)};
}

CoefficientFn faulty_coefficients(const std::string& fault) {
  if (fault.empty()) return {};
  if (fault == "gppo-upper-sign" || fault == "gppo-lower-sign") {
    const ClipCase target = fault == "gppo-upper-sign" ? ClipCase::Upper : ClipCase::Lower;
    return [target](double d, double a, const ClipConfig& c) {
      TokenGradRecord r = grad_coeff(d, a, c);
      if ((c.method == Method::Gppo || c.method == Method::GppoGeneral) && r.clipped_case == target) {
        r.coefficient = -r.coefficient;
      }
      return r;
    };
  }
  if (fault == "cispo-upper-drop") {
    return [](double d, double a, const ClipConfig& c) {
      TokenGradRecord r = grad_coeff(d, a, c);
      if (c.method == Method::Cispo && r.clipped_case == ClipCase::Upper) r.coefficient = 0.0;
      return r;
    };
  }
  if (fault == "ppo-indicator") {
    return [](double d, double a, const ClipConfig& c) {
      TokenGradRecord r = grad_coeff(d, a, c);
      if (c.method == Method::PpoClip && r.clipped_case != ClipCase::Interior) r.coefficient = d;
      return r;
    };
  }
  throw ValidationError("gradcheck: unknown fault '" + fault + "'");
}

ClipConfig config_for(Method m, const GradcheckOptions& o) {
  ClipConfig c;
  c.method = m;
  c.eps_l = o.eps_l;
  c.eps_h = m == Method::PpoClip ? o.eps_l : o.eps_h;
  c.normalization = o.normalization;
  if (m == Method::GppoGeneral) {
    c.beta1 = o.beta1;
    c.beta2 = o.beta2;
  }
  return c;
}

std::string fmt(const char* pattern, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), pattern, a, b);
  return buf;
}

void note_failure(SuiteResult& s, const std::string& what) {
  if (s.failures++ == 0) s.first_failure = what;
}

SuiteResult case_table_suite(Method m, const GradcheckOptions& o, const CoefficientFn& fault) {
  const ClipConfig cfg = config_for(m, o);
  SuiteResult s;
  s.method = to_string(m);
  s.suite = "case_table";
  for (int k = 1; k <= 300; ++k) {
    const double d = k / 100.0;
    for (double a : {-1.0, 1.0}) {
      ++s.cases;
      const TokenGradRecord want = reference_coefficient(d, a, cfg);
      const TokenGradRecord got = fault ? fault(d, a, cfg) : grad_coeff(d, a, cfg);
      const double err = std::abs(want.coefficient - got.coefficient);
      s.max_error = std::max(s.max_error, err);
      if (want.clipped_case != got.clipped_case || err > 1e-12) {
        note_failure(s, std::string(to_string(want.clipped_case)) + " case " +
                            fmt("at delta=%.2f, A=%+.0f", d, a) +
                            fmt(": expected F=%.6g, got %.6g", want.coefficient, got.coefficient));
      }
    }
  }
  return s;
}

// gppo_general with beta1 = beta2 = 1 must coincide with gppo.
SuiteResult beta_reduction_suite(const GradcheckOptions& o, const CoefficientFn& fault) {
  ClipConfig general = config_for(Method::GppoGeneral, o);
  general.beta1 = general.beta2 = 1.0;
  const ClipConfig gppo = config_for(Method::Gppo, o);
  SuiteResult s;
  s.method = "gppo_general";
  s.suite = "beta_reduction";
  for (int k = 1; k <= 300; ++k) {
    const double d = k / 100.0;
    for (double a : {-1.0, 1.0}) {
      ++s.cases;
      const TokenGradRecord x = fault ? fault(d, a, general) : grad_coeff(d, a, general);
      const TokenGradRecord y = fault ? fault(d, a, gppo) : grad_coeff(d, a, gppo);
      const double err = std::abs(x.coefficient - y.coefficient);
      s.max_error = std::max(s.max_error, err);
      if (x.clipped_case != y.clipped_case || err > 1e-12) {
        note_failure(s, fmt("beta=1 differs from gppo at delta=%.2f, A=%+.0f", d, a));
      }
    }
  }
  return s;
}

SuiteResult fd_suite(Method m, Regime regime, const GradcheckOptions& o, const CoefficientFn& fault) {
  const ClipConfig cfg = config_for(m, o);
  SuiteResult s;
  s.method = to_string(m);
  s.suite = regime == Regime::Interior ? "fd_interior" : "fd_stopgrad";
  SeededRng root(o.seed, regime == Regime::Interior ? 11 : 12);
  SurrogateOptions opts;
  opts.coefficient = fault;
  for (int i = 0; i < o.instances; ++i) {
    SeededRng rng = root.derive(static_cast<std::uint64_t>(i));
    const Instance inst = make_instance(rng, cfg, regime);
    const SurrogateResult analytic = surrogate_batch(inst.groups, inst.model, cfg, opts);

    PolicyModel probe = inst.model;
    ScalarFn loss;
    const FrozenBatch frozen = freeze_ratios(inst.groups, inst.model);
    // The min/clip family is differentiated through its real forward value on interior
    // instances; everything else through the stop-gradient form.
    if (regime == Regime::Interior && m != Method::Cispo) {
      loss = [&](std::span<const double> x) {
        std::copy(x.begin(), x.end(), probe.mutable_parameters().begin());
        return surrogate_batch(inst.groups, probe, cfg).loss;
      };
    } else {
      loss = [&](std::span<const double> x) {
        std::copy(x.begin(), x.end(), probe.mutable_parameters().begin());
        return -stopgrad_objective(inst.groups, probe, cfg, frozen);
      };
    }
    const std::vector<double> numeric = finite_diff_grad(loss, inst.model.parameters(), o.h);
    const double err = relative_error(analytic.gradient, numeric);
    ++s.cases;
    s.max_error = std::max(s.max_error, err);
    if (!(err <= o.tolerance)) {
      std::string where = "instance " + std::to_string(i);
      if (analytic.upper_clipped > 0) where += " (upper-clipped tokens present)";
      else if (analytic.lower_clipped > 0) where += " (lower-clipped tokens present)";
      note_failure(s, where + fmt(": relative error %.3g > %.3g", err, o.tolerance));
    }
  }
  return s;
}

}  // namespace

TokenGradRecord reference_coefficient(double d, double a, const ClipConfig& cfg) {
  const double lo = 1.0 - cfg.eps_l;
  const double hi = 1.0 + (cfg.method == Method::GrpoToken ? cfg.eps_l : cfg.eps_h);
  TokenGradRecord r;
  r.ratio = d;
  r.advantage = a;
  r.coefficient = d;
  r.clipped_case = ClipCase::Interior;
  const bool lower_neg = d < lo && a < 0.0;
  const bool upper_pos = d > hi && a > 0.0;
  switch (cfg.method) {
    case Method::PpoClip:
    case Method::GrpoToken:
    case Method::ClipHigher:
      if (lower_neg) r = {d, a, 0.0, ClipCase::Lower, 0.0, false};
      if (upper_pos) r = {d, a, 0.0, ClipCase::Upper, 0.0, false};
      break;
    case Method::Gppo:
      if (lower_neg) r = {d, a, lo, ClipCase::Lower, 0.0, false};
      if (upper_pos) r = {d, a, hi, ClipCase::Upper, 0.0, false};
      break;
    case Method::GppoGeneral:
      if (lower_neg) r = {d, a, cfg.beta1 * lo, ClipCase::Lower, 0.0, false};
      if (upper_pos) r = {d, a, cfg.beta2 * hi, ClipCase::Upper, 0.0, false};
      break;
    case Method::Cispo:
      if (d < lo) r = {d, a, lo, ClipCase::Lower, 0.0, false};
      if (d > hi) r = {d, a, hi, ClipCase::Upper, 0.0, false};
      break;
  }
  return r;
}

FrozenBatch freeze_ratios(std::span<const Group> groups, const PolicyModel& model) {
  FrozenBatch out;
  for (const Group& g : groups) {
    auto& per_group = out.ratio0.emplace_back();
    for (const Trajectory& t : g.trajectories) {
      auto& r = per_group.emplace_back();
      for (std::size_t i = 0; i < t.tokens.size(); ++i) {
        r.push_back(std::exp(model.logprob(t.contexts[i], t.tokens[i]) - t.logp_old[i]));
      }
    }
  }
  return out;
}

double stopgrad_objective(std::span<const Group> groups, const PolicyModel& model,
                          const ClipConfig& cfg, const FrozenBatch& frozen) {
  const double lo = 1.0 - cfg.eps_l;
  const double hi = 1.0 + (cfg.method == Method::GrpoToken ? cfg.eps_l : cfg.eps_h);
  double tokens = 0.0;
  double trajectories = 0.0;
  for (const Group& g : groups) {
    for (const Trajectory& t : g.trajectories) {
      tokens += static_cast<double>(t.tokens.size());
      trajectories += 1.0;
    }
  }
  double total = 0.0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& g = groups[gi];
    for (std::size_t j = 0; j < g.trajectories.size(); ++j) {
      const Trajectory& t = g.trajectories[j];
      const double w = cfg.normalization == Normalization::TokenLevel
                           ? 1.0 / tokens
                           : 1.0 / (trajectories * static_cast<double>(t.tokens.size()));
      for (std::size_t i = 0; i < t.tokens.size(); ++i) {
        const double a = t.token_advantages.empty() ? g.advantages[j] : t.token_advantages[i];
        const double logp = model.logprob(t.contexts[i], t.tokens[i]);
        const double d = std::exp(logp - t.logp_old[i]);
        const double d0 = frozen.ratio0[gi][j][i];
        double v = 0.0;
        switch (cfg.method) {
          case Method::PpoClip:
          case Method::GrpoToken:
          case Method::ClipHigher:
            v = std::min(d * a, std::clamp(d, lo, hi) * a);
            break;
          case Method::Gppo:
            // clip(d, lo * d/sg(d), hi * d/sg(d)): same value, gradient kept on clipped tokens.
            v = std::min(d * a, std::clamp(d, lo * d / d0, hi * d / d0) * a);
            break;
          case Method::GppoGeneral:
            if (d0 < lo && a < 0.0) v = cfg.beta1 * lo * (d / d0) * a;
            else if (d0 > hi && a > 0.0) v = cfg.beta2 * hi * (d / d0) * a;
            else v = d * a;
            break;
          case Method::Cispo:
            v = std::clamp(d0, lo, hi) * a * logp;
            break;
        }
        total += w * v;
      }
    }
  }
  return total;
}

bool GradcheckReport::passed() const {
  return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.passed(); });
}

double GradcheckReport::max_fd_error(Method m) const {
  double out = 0.0;
  for (const SuiteResult& s : suites) {
    if (s.method == to_string(m) && s.suite.rfind("fd_", 0) == 0) out = std::max(out, s.max_error);
  }
  return out;
}

nlohmann::json GradcheckReport::to_json() const {
  nlohmann::json j = {{"format", "cliplab.gradcheck.v1"}, {"passed", passed()}};
  nlohmann::json arr = nlohmann::json::array();
  for (const SuiteResult& s : suites) {
    arr.push_back({{"method", s.method},
                   {"suite", s.suite},
                   {"cases", s.cases},
                   {"failures", s.failures},
                   {"max_error", s.max_error},
                   {"first_failure", s.first_failure}});
  }
  j["suites"] = std::move(arr);
  nlohmann::json per_method = nlohmann::json::object();
  for (Method m : kAllMethods) per_method[std::string(to_string(m))] = max_fd_error(m);
  j["max_fd_relative_error"] = std::move(per_method);
  return j;
}

std::string GradcheckReport::to_text() const {
  std::ostringstream out;
  char line[200];
  std::snprintf(line, sizeof(line), "%-13s %-15s %7s %8s %12s\n", "method", "suite", "cases",
                "failures", "max_error");
  out << line;
  for (const SuiteResult& s : suites) {
    std::snprintf(line, sizeof(line), "%-13s %-15s %7d %8d %12.3e\n", s.method.c_str(),
                  s.suite.c_str(), s.cases, s.failures, s.max_error);
    out << line;
    if (!s.passed()) out << "  FAIL " << s.method << "/" << s.suite << ": " << s.first_failure << '\n';
  }
  out << (passed() ? "gradcheck: all suites passed\n" : "gradcheck: FAILED\n");
  return out.str();
}

GradcheckReport run_gradcheck(const GradcheckOptions& o) {
  if (o.instances < 1) throw ValidationError("gradcheck: instances must be >= 1");
  if (!(o.h > 0.0) || !(o.tolerance > 0.0)) throw ValidationError("gradcheck: h and tolerance must be positive");
  const CoefficientFn fault = faulty_coefficients(o.fault);
  for (Method m : kAllMethods) config_for(m, o).validate();

  GradcheckReport report;
  for (Method m : kAllMethods) {
    report.suites.push_back(case_table_suite(m, o, fault));
    if (m == Method::GppoGeneral) report.suites.push_back(beta_reduction_suite(o, fault));
    report.suites.push_back(fd_suite(m, Regime::Interior, o, fault));
    report.suites.push_back(fd_suite(m, Regime::Mixed, o, fault));
  }
  return report;
}

}  // namespace cliplab::cli
