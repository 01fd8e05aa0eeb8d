#include "cliplab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <thread>

#include "cliplab/error.hpp"

namespace cliplab {

namespace {

// Named RNG streams; every random draw in a run comes from one of these.
constexpr std::uint64_t kTaskPoolStream = 1;
constexpr std::uint64_t kModelInitStream = 2;
constexpr std::uint64_t kRolloutStream = 3;
constexpr std::uint64_t kSelectStream = 4;
constexpr std::uint64_t kWarmStartStream = 5;

using nlohmann::json;

// Reads known keys of one config section, rejecting unknown ones.
class SectionReader {
 public:
  SectionReader(const json& doc, const char* name) : name_(name) {
    if (doc.contains(name)) {
      section_ = &doc.at(name);
      if (!section_->is_object()) throw ValidationError(std::string("config: '") + name + "' must be an object");
    }
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.emplace_back(key);
    if (!section_ || !section_->contains(key)) return;
    try {
      out = section_->at(key).get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(std::string("config: ") + name_ + "." + key + ": " + e.what());
    }
  }

  template <typename T, typename Parse>
  void read_enum(const char* key, T& out, Parse parse) {
    std::string text;
    read(key, text);
    if (!text.empty()) {
      try {
        out = parse(text);
      } catch (const InvalidInput& e) {
        throw ValidationError(std::string("config: ") + name_ + "." + key + ": " + e.what());
      }
    }
  }

  template <typename T>
  void read_optional(const char* key, std::optional<T>& out) {
    seen_.emplace_back(key);
    if (!section_ || !section_->contains(key)) return;
    const json& v = section_->at(key);
    if (v.is_null()) {
      out.reset();
      return;
    }
    try {
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(std::string("config: ") + name_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) const { return section_ && section_->contains(key); }

  void finish() const {
    if (!section_) return;
    for (const auto& [key, value] : section_->items()) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
        throw ValidationError(std::string("config: unknown key ") + name_ + "." + key);
      }
    }
  }

 private:
  const char* name_;
  const json* section_ = nullptr;
  std::vector<std::string> seen_;
};

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

void TrainConfig::validate() const {
  clip.validate();
  model.validate();
  if (model.vocab_size != vocab::kSize) {
    throw ValidationError("config: model.vocab_size must equal the task vocabulary size");
  }
  if (group_size < 2) throw ValidationError("config: rollout.group_size must be >= 2");
  if (global_batch_prompts < 1) throw ValidationError("config: rollout.global_batch_prompts must be >= 1");
  if (minibatch_prompts < 1 || global_batch_prompts % minibatch_prompts != 0) {
    throw ValidationError("config: rollout.minibatch_prompts must divide rollout.global_batch_prompts");
  }
  if (epochs_per_rollout < 1) throw ValidationError("config: rollout.epochs_per_rollout must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("config: optim.lr must be positive");
  if (!(sft_alpha >= 0.0)) throw ValidationError("config: sft.alpha must be >= 0");
  if (max_len < 1) throw ValidationError("config: rollout.max_len must be >= 1");
  if (!(temperature > 0.0)) throw ValidationError("config: rollout.temperature must be positive");
  if (total_steps < 0) throw ValidationError("config: run.steps must be >= 0");
  if (checkpoint_interval < 0) throw ValidationError("config: run.checkpoint_interval must be >= 0");
  if (threads < 1) throw ValidationError("config: run.threads must be >= 1");
  if (task.pool_size < global_batch_prompts) {
    throw ValidationError("config: task.pool_size must be >= rollout.global_batch_prompts");
  }
  if (task.kind == TaskKind::BinaryMath && reward_mode != RewardMode::Binary) {
    throw ValidationError("config: binary_math tasks use reward.mode = binary");
  }
  if (task.kind == TaskKind::MultiCheckCode && reward_mode == RewardMode::Binary) {
    throw ValidationError("config: multi_check_code tasks use reward.mode = soft or hard_allpass");
  }
  if (warmstart.steps < 0) throw ValidationError("config: warmstart.steps must be >= 0");
  if (!(warmstart.demo_accuracy >= 0.0 && warmstart.demo_accuracy <= 1.0)) {
    throw ValidationError("config: warmstart.demo_accuracy must lie in [0, 1]");
  }
  if (warmstart.steps > 0 && !(warmstart.lr > 0.0)) {
    throw ValidationError("config: warmstart.lr must be positive");
  }
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 &&
        optimizer.beta2 < 1.0 && optimizer.epsilon > 0.0)) {
    throw ValidationError("config: optim adam parameters out of range");
  }
}

json to_json(const TrainConfig& c) {
  return json{
      {"format", kConfigFormat},
      {"run",
       {{"seed", c.seed},
        {"steps", c.total_steps},
        {"checkpoint_interval", c.checkpoint_interval},
        {"threads", c.threads},
        {"record_token_grads", c.record_token_grads},
        {"init_checkpoint", c.init_checkpoint}}},
      {"objective",
       {{"method", to_string(c.clip.method)},
        {"eps_l", c.clip.eps_l},
        {"eps_h", c.clip.eps_h},
        {"beta1", c.clip.beta1},
        {"beta2", c.clip.beta2},
        {"normalization", to_string(c.clip.normalization)},
        {"gppo_cap", optional_json(c.clip.gppo_cap)}}},
      {"rollout",
       {{"group_size", c.group_size},
        {"global_batch_prompts", c.global_batch_prompts},
        {"minibatch_prompts", c.minibatch_prompts},
        {"epochs_per_rollout", c.epochs_per_rollout},
        {"max_len", c.max_len},
        {"temperature", c.temperature}}},
      {"optim",
       {{"kind", to_string(c.optimizer.kind)},
        {"lr", c.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"epsilon", c.optimizer.epsilon}}},
      {"sft", {{"alpha", c.sft_alpha}}},
      {"filter", {{"zero_advantage", c.zero_adv_filter}}},
      {"reward", {{"mode", to_string(c.reward_mode)}}},
      {"task",
       {{"kind", to_string(c.task.kind)},
        {"difficulty", to_string(c.task.difficulty)},
        {"pool_size", c.task.pool_size},
        {"math_chain_easy", c.task.gen.math_chain_easy},
        {"math_chain_hard", c.task.gen.math_chain_hard},
        {"code_checks_easy", c.task.gen.code_checks_easy},
        {"code_checks_hard", c.task.gen.code_checks_hard},
        {"require_think_tags", optional_json(c.task.gen.require_think_tags)}}},
      {"model",
       {{"kind", to_string(c.model.kind)},
        {"vocab_size", c.model.vocab_size},
        {"context_window", c.model.context_window},
        {"prompt_rows", c.model.prompt_rows},
        {"hidden", c.model.hidden}}},
      {"warmstart",
       {{"steps", c.warmstart.steps},
        {"demo_accuracy", c.warmstart.demo_accuracy},
        {"lr", c.warmstart.lr}}},
  };
}

TrainConfig train_config_from_json(const json& doc) {
  if (!doc.is_object()) throw ValidationError("config: document must be a JSON object");
  static const char* kSections[] = {"format", "run",    "objective", "rollout", "optim",    "sft",
                                    "filter", "reward", "task",      "model",   "warmstart"};
  for (const auto& [key, value] : doc.items()) {
    if (std::find_if(std::begin(kSections), std::end(kSections),
                     [&](const char* s) { return key == s; }) == std::end(kSections)) {
      throw ValidationError("config: unknown section '" + key + "'");
    }
  }
  if (doc.contains("format") && doc.at("format") != kConfigFormat) {
    throw ValidationError("config: unsupported format tag");
  }
  TrainConfig c;

  SectionReader run(doc, "run");
  run.read("seed", c.seed);
  run.read("steps", c.total_steps);
  run.read("checkpoint_interval", c.checkpoint_interval);
  run.read("threads", c.threads);
  run.read("record_token_grads", c.record_token_grads);
  run.read("init_checkpoint", c.init_checkpoint);
  run.finish();

  SectionReader obj(doc, "objective");
  obj.read_enum("method", c.clip.method, parse_method);
  obj.read("eps_l", c.clip.eps_l);
  obj.read("eps_h", c.clip.eps_h);
  obj.read("beta1", c.clip.beta1);
  obj.read("beta2", c.clip.beta2);
  obj.read_enum("normalization", c.clip.normalization, parse_normalization);
  obj.read_optional("gppo_cap", c.clip.gppo_cap);
  obj.finish();

  SectionReader roll(doc, "rollout");
  roll.read("group_size", c.group_size);
  roll.read("global_batch_prompts", c.global_batch_prompts);
  roll.read("minibatch_prompts", c.minibatch_prompts);
  roll.read("epochs_per_rollout", c.epochs_per_rollout);
  roll.read("max_len", c.max_len);
  roll.read("temperature", c.temperature);
  roll.finish();

  SectionReader opt(doc, "optim");
  opt.read_enum("kind", c.optimizer.kind, parse_optimizer_kind);
  opt.read("lr", c.lr);
  opt.read("beta1", c.optimizer.beta1);
  opt.read("beta2", c.optimizer.beta2);
  opt.read("epsilon", c.optimizer.epsilon);
  opt.finish();

  SectionReader sft(doc, "sft");
  sft.read("alpha", c.sft_alpha);
  sft.finish();

  SectionReader filt(doc, "filter");
  filt.read("zero_advantage", c.zero_adv_filter);
  filt.finish();

  SectionReader task(doc, "task");
  task.read_enum("kind", c.task.kind, parse_task_kind);
  task.read_enum("difficulty", c.task.difficulty, parse_difficulty);
  task.read("pool_size", c.task.pool_size);
  task.read("math_chain_easy", c.task.gen.math_chain_easy);
  task.read("math_chain_hard", c.task.gen.math_chain_hard);
  task.read("code_checks_easy", c.task.gen.code_checks_easy);
  task.read("code_checks_hard", c.task.gen.code_checks_hard);
  task.read_optional("require_think_tags", c.task.gen.require_think_tags);
  task.finish();

  SectionReader reward(doc, "reward");
  c.reward_mode = default_reward_mode(c.task.kind);
  reward.read_enum("mode", c.reward_mode, parse_reward_mode);
  reward.finish();

  SectionReader model(doc, "model");
  model.read_enum("kind", c.model.kind, parse_model_kind);
  model.read("vocab_size", c.model.vocab_size);
  model.read("context_window", c.model.context_window);
  model.read("prompt_rows", c.model.prompt_rows);
  model.read("hidden", c.model.hidden);
  model.finish();

  SectionReader warm(doc, "warmstart");
  warm.read("steps", c.warmstart.steps);
  warm.read("demo_accuracy", c.warmstart.demo_accuracy);
  warm.read("lr", c.warmstart.lr);
  warm.finish();
  return c;
}

json to_json(const StepMetrics& m) {
  return json{
      {"format", kMetricsFormat},
      {"step", m.step},
      {"loss", m.loss},
      {"mean_reward", m.mean_reward},
      {"reward_variance", m.reward_variance},
      {"reward_variance_unit", m.reward_variance_unit},
      {"mean_pass_rate", m.mean_pass_rate},
      {"grad_norm", m.grad_norm},
      {"mean_entropy", m.mean_entropy},
      {"clip_lower_frac", m.clip_lower_frac},
      {"clip_upper_frac", m.clip_upper_frac},
      {"sft_loss", m.sft_loss},
      {"mean_response_length", m.mean_response_length},
      {"zero_adv_groups", m.zero_adv_groups},
      {"updates", m.updates},
      {"aborted_updates", m.aborted_updates},
      {"capped_tokens", m.capped_tokens},
      {"tokens", m.tokens},
  };
}

StepMetrics step_metrics_from_json(const json& j) {
  if (j.value("format", std::string{}) != kMetricsFormat) {
    throw InvalidInput("metrics record: missing or unsupported format tag");
  }
  StepMetrics m;
  m.step = j.at("step").get<int>();
  m.loss = j.at("loss").get<double>();
  m.mean_reward = j.at("mean_reward").get<double>();
  m.reward_variance = j.at("reward_variance").get<double>();
  m.reward_variance_unit = j.at("reward_variance_unit").get<double>();
  m.mean_pass_rate = j.at("mean_pass_rate").get<double>();
  m.grad_norm = j.at("grad_norm").get<double>();
  m.mean_entropy = j.at("mean_entropy").get<double>();
  m.clip_lower_frac = j.at("clip_lower_frac").get<double>();
  m.clip_upper_frac = j.at("clip_upper_frac").get<double>();
  m.sft_loss = j.at("sft_loss").get<double>();
  m.mean_response_length = j.at("mean_response_length").get<double>();
  m.zero_adv_groups = j.at("zero_adv_groups").get<int>();
  m.updates = j.at("updates").get<int>();
  m.aborted_updates = j.at("aborted_updates").get<int>();
  m.capped_tokens = j.at("capped_tokens").get<std::size_t>();
  m.tokens = j.at("tokens").get<std::size_t>();
  return m;
}

std::vector<TaskSpec> make_task_pool(const TrainConfig& cfg) {
  SeededRng rng(cfg.seed, kTaskPoolStream);
  std::vector<TaskSpec> pool;
  pool.reserve(static_cast<std::size_t>(cfg.task.pool_size));
  for (int i = 0; i < cfg.task.pool_size; ++i) {
    pool.push_back(gen_task(rng, cfg.task.kind, cfg.task.difficulty, cfg.task.gen));
  }
  return pool;
}

std::vector<Group> rollout_phase(const PolicyModel& model, std::span<const TaskSpec> prompts,
                                 const TrainConfig& cfg, std::uint64_t step) {
  if (prompts.empty()) throw InvalidInput("rollout_phase: no prompts");
  std::vector<Group> groups(prompts.size());
  const SeededRng step_rng = SeededRng(cfg.seed, kRolloutStream).derive(step);

  auto run_one = [&](std::size_t i) {
    SeededRng rng = step_rng.derive(i);
    Group g = sample_group(model, prompts[i], cfg.group_size, cfg.max_len, cfg.temperature, rng);
    g.rewards.reserve(g.trajectories.size());
    for (Trajectory& t : g.trajectories) {
      const RewardOutcome r = score_response(t.tokens, prompts[i], cfg.reward_mode);
      t.reward = r.value;
      t.pass_fraction = static_cast<double>(r.passes) / r.total;
      g.rewards.push_back(r.value);
    }
    assign_advantages(g);
    groups[i] = std::move(g);
  };

  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), prompts.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < prompts.size(); ++i) run_one(i);
    return groups;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < prompts.size(); i += workers) run_one(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return groups;
}

UpdateResult update_phase(std::span<const Group> groups, PolicyModel& model,
                          OptimizerState& optimizer, const TrainConfig& cfg, std::uint64_t step,
                          std::ostream* token_grads) {
  UpdateResult result;
  std::vector<Group> filtered;
  std::span<const Group> used = groups;
  if (cfg.zero_adv_filter) {
    ZeroAdvantageFilter f = filter_zero_advantage(groups);
    result.zero_adv_groups = f.dropped;
    filtered = std::move(f.kept);
    used = filtered;
  } else {
    result.zero_adv_groups = static_cast<std::size_t>(
        std::count_if(groups.begin(), groups.end(), [](const Group& g) { return g.degenerate; }));
  }

  const std::size_t mb = static_cast<std::size_t>(cfg.minibatch_prompts);
  SurrogateOptions options;
  options.collect_records = token_grads != nullptr;
  SurrogateResult rl;
  SftResult sft;
  std::vector<const Trajectory*> positives;
  for (int epoch = 0; epoch < cfg.epochs_per_rollout; ++epoch) {
    for (std::size_t start = 0, index = 0; start < used.size(); start += mb, ++index) {
      const std::span<const Group> batch = used.subspan(start, std::min(mb, used.size() - start));
      UpdateMetrics um;
      um.epoch = epoch;
      um.minibatch = static_cast<int>(index);
      try {
        surrogate_batch(batch, model, cfg.clip, options, rl);
      } catch (const RatioOverflow&) {
        um.aborted = true;
        result.updates.push_back(um);
        continue;
      }
      um.tokens = rl.token_count;
      um.lower_clipped = rl.lower_clipped;
      um.upper_clipped = rl.upper_clipped;
      um.capped = rl.capped;
      um.entropy_sum = rl.entropy_sum;
      um.rl_loss = rl.loss;
      um.loss = rl.loss;

      // rl.gradient becomes the combined gradient in place.
      if (cfg.sft_alpha > 0.0) {
        positives.clear();
        for (const Group& g : batch) {
          for (std::size_t j = 0; j < g.trajectories.size(); ++j) {
            if (g.advantages[j] > 0.0) positives.push_back(&g.trajectories[j]);
          }
        }
        sft_loss(positives, model, sft);
        um.sft_loss = sft.loss;
        um.sft_tokens = sft.token_count;
        if (!sft.empty) {
          um.loss += cfg.sft_alpha * sft.loss;
          axpy(cfg.sft_alpha, sft.gradient, rl.gradient);
        }
      }
      um.grad_norm = norm2(rl.gradient);
      if (!std::isfinite(um.loss) || !std::isfinite(um.grad_norm)) {
        um.aborted = true;
        result.updates.push_back(um);
        continue;
      }
      try {
        apply_update(model, rl.gradient, optimizer, cfg.lr);
      } catch (const UpdateRejected&) {
        um.aborted = true;
      }
      if (token_grads) write_token_grad_records(*token_grads, step, batch, rl);
      result.updates.push_back(um);
    }
  }
  return result;
}

void warm_start(PolicyModel& model, std::span<const TaskSpec> pool, const TrainConfig& cfg) {
  const WarmStartConfig& ws = cfg.warmstart;
  if (ws.steps <= 0 || pool.empty()) return;
  OptimizerState sgd = make_optimizer_state(OptimizerConfig{}, model.parameter_count());
  const SeededRng root(cfg.seed, kWarmStartStream);
  for (int s = 0; s < ws.steps; ++s) {
    SeededRng rng = root.derive(static_cast<std::uint64_t>(s));
    std::vector<Trajectory> demos;
    demos.reserve(pool.size());
    for (const TaskSpec& task : pool) {
      std::vector<int> response = reference_response(task);
      for (int& t : response) {
        if (vocab::is_digit(t) && rng.uniform() >= ws.demo_accuracy) {
          t = static_cast<int>(rng.uniform_index(vocab::kDigitCount));
        }
      }
      demos.push_back(score_response_tokens(model, task, response));
    }
    const SftResult sft = sft_loss(std::span<const Trajectory>(demos), model);
    apply_update(model, sft.gradient, sgd, ws.lr);
  }
}

StepMetrics summarize_step(int step, std::span<const Group> groups, const UpdateResult& update,
                           RewardMode mode) {
  StepMetrics m;
  m.step = step;
  const auto [lo, hi] = reward_range(mode);
  double n = 0.0;
  double sum = 0.0;
  double pass = 0.0;
  double length = 0.0;
  for (const Group& g : groups) {
    for (const Trajectory& t : g.trajectories) {
      sum += t.reward;
      pass += t.pass_fraction;
      length += static_cast<double>(t.length());
      n += 1.0;
    }
  }
  if (n > 0.0) {
    m.mean_reward = sum / n;
    m.mean_pass_rate = pass / n;
    m.mean_response_length = length / n;
    double ss = 0.0;
    for (const Group& g : groups) {
      for (const Trajectory& t : g.trajectories) ss += (t.reward - m.mean_reward) * (t.reward - m.mean_reward);
    }
    m.reward_variance = ss / n;
    m.reward_variance_unit = m.reward_variance / ((hi - lo) * (hi - lo));
  }
  m.zero_adv_groups = static_cast<int>(update.zero_adv_groups);
  double entropy = 0.0;
  std::size_t lower = 0;
  std::size_t upper = 0;
  int applied = 0;
  for (const UpdateMetrics& u : update.updates) {
    if (u.aborted) {
      ++m.aborted_updates;
      continue;
    }
    ++applied;
    m.loss += u.loss;
    m.sft_loss += u.sft_loss;
    m.grad_norm += u.grad_norm;
    entropy += u.entropy_sum;
    lower += u.lower_clipped;
    upper += u.upper_clipped;
    m.capped_tokens += u.capped;
    m.tokens += u.tokens;
  }
  m.updates = applied;
  if (applied > 0) {
    m.loss /= applied;
    m.sft_loss /= applied;
    m.grad_norm /= applied;
  }
  if (m.tokens > 0) {
    const double tokens = static_cast<double>(m.tokens);
    m.mean_entropy = entropy / tokens;
    m.clip_lower_frac = static_cast<double>(lower) / tokens;
    m.clip_upper_frac = static_cast<double>(upper) / tokens;
  }
  return m;
}

TrainResult train(const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  const std::vector<TaskSpec> pool = make_task_pool(cfg);

  SeededRng init(cfg.seed, kModelInitStream);
  PolicyModel model = PolicyModel::from_shape(cfg.model, init);
  OptimizerState optimizer = make_optimizer_state(cfg.optimizer, model.parameter_count());
  if (!cfg.init_checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(cfg.init_checkpoint);
    if (!(ck.model.shape() == model.shape())) {
      throw ValidationError("config: init_checkpoint shape does not match model section");
    }
    model = std::move(ck.model);
    if (ck.optimizer.config == cfg.optimizer) optimizer = std::move(ck.optimizer);
  }
  warm_start(model, pool, cfg);

  std::ofstream metrics_out;
  std::ofstream grads_out;
  const auto& dir = options.run_dir;
  if (dir) {
    std::filesystem::create_directories(*dir);
    std::ofstream(*dir / "config.json") << to_json(cfg).dump(2) << '\n';
    metrics_out.open(*dir / "metrics.jsonl", std::ios::trunc);
    if (cfg.record_token_grads) grads_out.open(*dir / "tokengrads.jsonl", std::ios::trunc);
  }
  auto checkpoint_of = [&](std::uint64_t step) {
    return Checkpoint{model, optimizer, cfg.seed, kRolloutStream, std::string(SeededRng::kAlgorithm), step};
  };

  TrainResult result{{}, checkpoint_of(0)};
  result.history.reserve(static_cast<std::size_t>(cfg.total_steps));
  std::vector<std::size_t> order(pool.size());
  for (int step = 1; step <= cfg.total_steps; ++step) {
    // Draw global_batch_prompts prompts without replacement, in shuffled order.
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SeededRng pick = SeededRng(cfg.seed, kSelectStream).derive(static_cast<std::uint64_t>(step));
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      std::swap(order[i], order[i + pick.uniform_index(order.size() - i)]);
    }
    std::vector<TaskSpec> prompts;
    for (int i = 0; i < cfg.global_batch_prompts; ++i) prompts.push_back(pool[order[static_cast<std::size_t>(i)]]);

    const std::vector<Group> groups = rollout_phase(model, prompts, cfg, static_cast<std::uint64_t>(step));
    const UpdateResult upd = update_phase(groups, model, optimizer, cfg, static_cast<std::uint64_t>(step),
                                          grads_out.is_open() ? &grads_out : nullptr);
    StepMetrics m = summarize_step(step, groups, upd, cfg.reward_mode);
    if (metrics_out.is_open()) metrics_out << to_json(m).dump() << '\n' << std::flush;
    result.history.push_back(m);
    if (dir && cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint-%06d.json", step);
      save_checkpoint(checkpoint_of(static_cast<std::uint64_t>(step)), *dir / name);
    }
  }
  result.final_checkpoint = checkpoint_of(static_cast<std::uint64_t>(cfg.total_steps));
  if (dir) save_checkpoint(result.final_checkpoint, *dir / "checkpoint-final.json");
  return result;
}

}  // namespace cliplab
