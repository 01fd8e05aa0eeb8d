#include "cliplab/curation.hpp"

#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <unordered_set>

#include "cliplab/error.hpp"
#include "cliplab/objectives.hpp"

namespace cliplab {

namespace {

struct TokenSeqHash {
  std::size_t operator()(std::span<const int> seq) const noexcept {
    std::uint64_t h = mix64(seq.size());
    for (int t : seq) h = hash_combine(h, static_cast<std::uint64_t>(t));
    return static_cast<std::size_t>(h);
  }
  std::size_t operator()(const std::vector<int>& seq) const noexcept {
    return (*this)(std::span<const int>(seq));
  }
};

}  // namespace

DedupResult exact_dedup(std::span<const CorpusRecord> corpus) {
  DedupResult out;
  std::unordered_set<std::vector<int>, TokenSeqHash> seen;
  for (const CorpusRecord& rec : corpus) {
    if (seen.insert(rec.prompt_tokens()).second) {
      out.kept.push_back(rec);
    } else {
      out.removed.push_back({rec, "duplicate_prompt"});
    }
  }
  return out;
}

NgramResult ngram_filter(std::span<const CorpusRecord> corpus,
                         std::span<const std::vector<int>> eval_set, int n) {
  if (n < 1) throw InvalidInput("ngram_filter: n must be >= 1");
  const std::size_t width = static_cast<std::size_t>(n);
  std::unordered_set<std::vector<int>, TokenSeqHash> grams;
  for (const std::vector<int>& seq : eval_set) {
    for (std::size_t i = 0; i + width <= seq.size(); ++i) {
      grams.emplace(seq.begin() + static_cast<std::ptrdiff_t>(i),
                    seq.begin() + static_cast<std::ptrdiff_t>(i + width));
    }
  }
  NgramResult out;
  std::vector<int> window(width);
  for (const CorpusRecord& rec : corpus) {
    const std::vector<int>& p = rec.prompt_tokens();
    bool hit = false;
    std::size_t at = 0;
    for (std::size_t i = 0; !grams.empty() && i + width <= p.size(); ++i) {
      std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(i), width, window.begin());
      if (grams.contains(window)) {
        hit = true;
        at = i;
        break;
      }
    }
    if (hit) {
      out.rejected.push_back({rec, std::to_string(n) + "-gram overlap at offset " + std::to_string(at)});
    } else {
      out.kept.push_back(rec);
    }
  }
  return out;
}

PassrateResult passrate_filter(std::span<const CorpusRecord> corpus, const PolicyModel& oracle,
                               const PassrateOptions& options) {
  if (options.k < 1) throw InvalidInput("passrate_filter: k must be >= 1");
  PassrateResult out;
  const SeededRng root(options.seed, mix64(0x7061737372617465ULL));
  for (const CorpusRecord& rec : corpus) {
    PassStats stats;
    stats.id = rec.id();
    if (rec.task.kind == TaskKind::MultiCheckCode && rec.task.check_count < options.min_checks) {
      stats.outcome = "too_few_checks";
      out.stats.push_back(stats);
      out.rejected.push_back({rec, "check_count " + std::to_string(rec.task.check_count) + " < " +
                                       std::to_string(options.min_checks)});
      continue;
    }
    try {
      rec.task.validate();
      // Portable key: std::hash is implementation-defined.
      std::uint64_t key = mix64(rec.id().size());
      for (unsigned char c : rec.id()) key = hash_combine(key, c);
      SeededRng rng = root.derive(key);
      const Group g = sample_group(oracle, rec.task, options.k, options.max_len,
                                   options.temperature, rng);
      stats.rollouts = options.k;
      for (const Trajectory& t : g.trajectories) {
        const RewardOutcome r = rec.task.kind == TaskKind::BinaryMath
                                    ? verify_binary(t.tokens, rec.task)
                                    : verify_hard_allpass(t.tokens, rec.task);
        if (r.value > 0.0) ++stats.full_passes;
      }
    } catch (const Error& e) {
      stats.outcome = "verifier_error";
      ++out.verifier_errors;
      out.stats.push_back(stats);
      out.rejected.push_back({rec, std::string("verifier_error: ") + e.what()});
      continue;
    }
    stats.fraction = static_cast<double>(stats.full_passes) / stats.rollouts;
    if (stats.fraction > options.threshold) {
      stats.outcome = "kept";
      out.kept.push_back(rec);
    } else {
      stats.outcome = stats.fraction == options.threshold ? "tie" : "below_threshold";
      if (stats.fraction == options.threshold) ++out.ties;
      out.rejected.push_back({rec, "pass fraction " + std::to_string(stats.fraction) +
                                       " not above " + std::to_string(options.threshold)});
    }
    out.stats.push_back(stats);
  }
  return out;
}

PolicyModel fit_reference_policy(std::span<const TaskSpec> tasks, const ReferenceFitOptions& options) {
  if (options.steps < 0 || !(options.lr > 0.0)) {
    throw InvalidInput("fit_reference_policy: steps must be >= 0 and lr positive");
  }
  SeededRng init(options.seed, 0);
  PolicyModel model = PolicyModel::from_shape(options.shape, init);
  if (tasks.empty()) return model;
  std::vector<std::vector<int>> responses;
  responses.reserve(tasks.size());
  for (const TaskSpec& t : tasks) responses.push_back(reference_response(t));

  OptimizerConfig adam;
  adam.kind = OptimizerKind::Adam;
  OptimizerState state = make_optimizer_state(adam, model.parameter_count());
  std::vector<Trajectory> demos(tasks.size());
  std::vector<const Trajectory*> ptrs;
  for (const Trajectory& d : demos) ptrs.push_back(&d);
  SftResult sft;
  for (int step = 0; step < options.steps; ++step) {
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      demos[i] = score_response_tokens(model, tasks[i], responses[i]);
    }
    sft_loss(ptrs, model, sft);
    apply_update(model, sft.gradient, state, options.lr);
  }
  return model;
}

std::string corpus_record_to_json_line(const CorpusRecord& rec) {
  const TaskSpec& t = rec.task;
  nlohmann::json j = {
      {"format", kCorpusFormat},
      {"id", t.id},
      {"prompt", t.prompt_tokens},
      {"kind", to_string(t.kind)},
      {"answer", t.answer},
      {"check_count", t.check_count},
      {"require_think_tags", t.require_think_tags},
      {"difficulty", to_string(t.difficulty)},
      {"source", rec.source},
  };
  return j.dump();
}

CorpusRecord corpus_record_from_json_line(std::string_view line) {
  const nlohmann::json j = nlohmann::json::parse(line);
  if (j.value("format", std::string{}) != kCorpusFormat) {
    throw InvalidInput("corpus record: missing or unsupported format tag");
  }
  CorpusRecord rec;
  rec.task.id = j.at("id").get<std::string>();
  rec.task.prompt_tokens = j.at("prompt").get<std::vector<int>>();
  rec.task.kind = parse_task_kind(j.at("kind").get<std::string>());
  rec.task.answer = j.value("answer", std::vector<int>{});
  rec.task.check_count = j.value("check_count", 1);
  rec.task.require_think_tags = j.value("require_think_tags", false);
  rec.task.difficulty = parse_difficulty(j.value("difficulty", std::string("easy")));
  rec.source = j.value("source", std::string{});
  return rec;
}

void write_corpus(std::ostream& out, std::span<const CorpusRecord> corpus) {
  for (const CorpusRecord& rec : corpus) out << corpus_record_to_json_line(rec) << '\n';
}

std::vector<CorpusRecord> read_corpus(std::istream& in) {
  std::vector<CorpusRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(corpus_record_from_json_line(line));
  }
  return out;
}

std::vector<std::vector<int>> read_eval_set(std::istream& in) {
  std::vector<std::vector<int>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    if (j.is_array()) {
      out.push_back(j.get<std::vector<int>>());
    } else {
      out.push_back(j.at("prompt").get<std::vector<int>>());
    }
  }
  return out;
}

}  // namespace cliplab
