#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

#include "cliplab/cli/app.hpp"

namespace cliplab::cli {

namespace {

// Metrics aggregated into summary.csv, in column order.
struct MetricColumn {
  const char* name;
  double StepMetrics::*field;
};

constexpr MetricColumn kSummaryMetrics[] = {
    {"mean_reward", &StepMetrics::mean_reward},
    {"reward_variance", &StepMetrics::reward_variance},
    {"reward_variance_unit", &StepMetrics::reward_variance_unit},
    {"mean_pass_rate", &StepMetrics::mean_pass_rate},
    {"loss", &StepMetrics::loss},
    {"sft_loss", &StepMetrics::sft_loss},
    {"grad_norm", &StepMetrics::grad_norm},
    {"mean_entropy", &StepMetrics::mean_entropy},
    {"clip_lower_frac", &StepMetrics::clip_lower_frac},
    {"clip_upper_frac", &StepMetrics::clip_upper_frac},
    {"mean_response_length", &StepMetrics::mean_response_length},
};

std::string path_safe(std::string name) {
  for (char& c : name) {
    if (c == '/' || c == '\\' || c == ' ' || c == ':') c = '_';
  }
  return name;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool history_complete(const std::vector<StepMetrics>& h, std::size_t steps) {
  if (h.size() != steps) return false;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (h[i].step != static_cast<int>(i + 1)) return false;
    for (const MetricColumn& col : kSummaryMetrics) {
      if (!std::isfinite(h[i].*col.field)) return false;
    }
  }
  return true;
}

}  // namespace

json to_json(const CompareRequest& r) {
  json vary = json::array();
  for (const VaryAxis& v : r.vary) vary.push_back({{"key", v.key}, {"values", v.values}});
  return {{"base", r.base},       {"config_path", r.config_path}, {"methods", r.methods},
          {"seeds", r.seeds},     {"vary", vary},                 {"jobs", r.jobs}};
}

CompareRequest compare_request_from_json(const json& j) {
  CompareRequest r;
  r.base = j.at("base");
  r.config_path = j.value("config_path", std::string{});
  r.methods = j.at("methods").get<std::vector<std::string>>();
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  for (const json& v : j.at("vary")) {
    r.vary.push_back({v.at("key").get<std::string>(), v.at("values").get<std::vector<std::string>>()});
  }
  r.jobs = j.value("jobs", 1);
  return r;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::size_t steps_to_reach(const std::vector<double>& curve, double target) {
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve[i] >= target) return i + 1;
  }
  return 0;
}

std::vector<CompareCell> expand_grid(const CompareRequest& r) {
  std::vector<std::string> methods = r.methods;
  if (methods.empty()) methods.push_back(std::string(to_string(resolve_config(r.base).clip.method)));
  for (const std::string& m : methods) {
    try {
      parse_method(m);
    } catch (const InvalidInput& e) {
      throw ValidationError(std::string("compare: ") + e.what());
    }
  }
  if (std::set<std::string>(methods.begin(), methods.end()).size() != methods.size()) {
    throw ValidationError("compare: duplicate method in --methods");
  }
  for (const VaryAxis& v : r.vary) {
    if (v.key == "objective.method" || v.key == "run.seed") {
      throw ValidationError("compare: use --methods / --seeds instead of --vary " + v.key);
    }
    if (v.values.empty()) throw ValidationError("compare: --vary " + v.key + " has no values");
  }
  std::size_t variants = methods.size();
  for (const VaryAxis& v : r.vary) variants *= v.values.size();
  if (variants < 2) {
    throw ValidationError("compare: needs at least two variants (two methods, or a --vary axis with two values)");
  }
  if (r.seeds.size() < 2) throw ValidationError("compare: needs at least two seeds");
  if (std::set<std::uint64_t>(r.seeds.begin(), r.seeds.end()).size() != r.seeds.size()) {
    throw ValidationError("compare: duplicate seed");
  }
  if (r.jobs < 1) throw ValidationError("compare: --jobs must be >= 1");

  std::vector<CompareCell> cells;
  for (const std::string& m : methods) {
    // Odometer over the vary axes.
    std::vector<std::size_t> idx(r.vary.size(), 0);
    for (;;) {
      std::string name = m;
      json doc = r.base;
      doc["objective"]["method"] = m;
      for (std::size_t a = 0; a < r.vary.size(); ++a) {
        name += "/" + r.vary[a].key + "=" + r.vary[a].values[idx[a]];
        apply_override(doc, r.vary[a].key, r.vary[a].values[idx[a]]);
      }
      for (std::uint64_t s : r.seeds) {
        json cell = doc;
        cell["run"]["seed"] = s;
        cells.push_back({name, s, to_json(resolve_config(cell))});
      }
      std::size_t a = 0;
      for (; a < idx.size(); ++a) {
        if (++idx[a] < r.vary[a].values.size()) break;
        idx[a] = 0;
      }
      if (a == idx.size()) break;
    }
  }
  return cells;
}

CompareResult run_compare(const CompareRequest& r, const fs::path& out,
                          const std::vector<std::string>& argv, std::ostream& log) {
  const std::vector<CompareCell> cells = expand_grid(r);
  CompareRequest resolved = r;
  resolved.base = to_json(resolve_config(r.base));
  write_manifest({"compare", r.config_path, r.seeds, out, argv, to_json(resolved)});

  std::vector<std::vector<StepMetrics>> histories(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        const CompareCell& c = cells[i];
        const fs::path dir = out / "cells" / path_safe(c.variant) / ("seed-" + std::to_string(c.seed));
        const fs::path tmp = dir.string() + ".tmp";
        fs::remove_all(tmp);
        TrainResult res = train(resolve_config(c.config), TrainOptions{tmp});
        fs::remove_all(dir);
        fs::rename(tmp, dir);
        histories[i] = std::move(res.history);
        std::lock_guard lock(log_mutex);
        log << "cell " << c.variant << " seed " << c.seed << ": final mean reward "
            << (histories[i].empty() ? 0.0 : histories[i].back().mean_reward) << '\n';
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!failure) failure = std::current_exception();
        next = cells.size();
      }
    }
  };
  const std::size_t jobs = std::min<std::size_t>(static_cast<std::size_t>(r.jobs), cells.size());
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  CompareResult result;
  std::string csv = "variant,method,metric,step,n,median,q1,q3,min,max\n";
  json variants = json::array();
  for (std::size_t start = 0; start < cells.size(); start += r.seeds.size()) {
    const CompareCell& first = cells[start];
    const std::size_t steps = static_cast<std::size_t>(first.config.at("run").at("steps").get<int>());
    VariantSummary v;
    v.name = first.variant;
    v.method = first.config.at("objective").at("method").get<std::string>();
    for (const VaryAxis& axis : r.vary) {
      const auto dot = axis.key.find('.');
      v.settings[axis.key] = first.config.at(axis.key.substr(0, dot)).at(axis.key.substr(dot + 1));
    }
    v.steps = steps;
    v.complete = true;
    for (std::size_t c = start; c < start + r.seeds.size(); ++c) {
      v.complete = v.complete && history_complete(histories[c], steps);
    }
    for (const MetricColumn& col : kSummaryMetrics) {
      for (std::size_t s = 0; s < steps; ++s) {
        std::vector<double> xs;
        for (std::size_t c = start; c < start + r.seeds.size(); ++c) {
          if (s < histories[c].size()) xs.push_back(histories[c][s].*col.field);
        }
        if (xs.empty()) continue;
        const double med = quantile(xs, 0.5);
        const double q1 = quantile(xs, 0.25);
        const double q3 = quantile(xs, 0.75);
        csv += v.name + "," + v.method + "," + col.name + "," + std::to_string(s + 1) + "," +
               std::to_string(xs.size()) + "," + num(med) + "," + num(q1) + "," + num(q3) + "," +
               num(*std::min_element(xs.begin(), xs.end())) + "," +
               num(*std::max_element(xs.begin(), xs.end())) + "\n";
        if (col.field == &StepMetrics::mean_reward) {
          v.median.push_back(med);
          v.q1.push_back(q1);
          v.q3.push_back(q3);
        }
      }
    }
    json cell_dirs = json::array();
    for (std::size_t c = start; c < start + r.seeds.size(); ++c) {
      cell_dirs.push_back((fs::path("cells") / path_safe(cells[c].variant) /
                           ("seed-" + std::to_string(cells[c].seed)))
                              .generic_string());
    }
    const double final_median = v.median.empty() ? 0.0 : v.median.back();
    variants.push_back({{"name", v.name},
                        {"method", v.method},
                        {"settings", v.settings.is_null() ? json::object() : v.settings},
                        {"steps", v.steps},
                        {"complete", v.complete},
                        {"final_mean_reward",
                         {{"median", final_median},
                          {"q1", v.q1.empty() ? 0.0 : v.q1.back()},
                          {"q3", v.q3.empty() ? 0.0 : v.q3.back()}}},
                        {"steps_to_own_final", steps_to_reach(v.median, final_median)},
                        {"cells", cell_dirs}});
    log << "variant " << v.name << ": final median mean reward " << final_median
        << (v.complete ? "" : " (INCOMPLETE)") << '\n';
    result.variants.push_back(std::move(v));
  }
  write_file_atomic(out / "summary.csv", csv);
  write_file_atomic(out / "summary.json",
                    json{{"format", "cliplab.compare.v1"},
                         {"seeds", r.seeds},
                         {"metric_columns", "variant,method,metric,step,n,median,q1,q3,min,max"},
                         {"variants", variants}}
                            .dump(2) +
                        "\n");
  log << "summary: " << (out / "summary.csv").string() << '\n';
  return result;
}

}  // namespace cliplab::cli
