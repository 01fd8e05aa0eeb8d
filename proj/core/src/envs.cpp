#include "cliplab/envs.hpp"

#include <cstdio>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>

#include "cliplab/error.hpp"

namespace cliplab {

namespace vocab {
std::string token_name(int token) {
  if (is_digit(token)) return std::string(1, static_cast<char>('0' + token));
  switch (token) {
    case kPlus: return "+";
    case kMinus: return "-";
    case kTimes: return "*";
    case kThinkOpen: return "<think>";
    case kThinkClose: return "</think>";
    default: return "<?" + std::to_string(token) + ">";
  }
}
}  // namespace vocab

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::BinaryMath ? "binary_math" : "multi_check_code";
}

std::string_view to_string(Difficulty difficulty) {
  return difficulty == Difficulty::Easy ? "easy" : "hard";
}

std::string_view to_string(RewardMode mode) {
  switch (mode) {
    case RewardMode::Binary: return "binary";
    case RewardMode::Soft: return "soft";
    case RewardMode::HardAllPass: return "hard_allpass";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "binary_math") return TaskKind::BinaryMath;
  if (text == "multi_check_code") return TaskKind::MultiCheckCode;
  throw InvalidInput("unknown task kind '" + std::string(text) + "'");
}

Difficulty parse_difficulty(std::string_view text) {
  if (text == "easy") return Difficulty::Easy;
  if (text == "hard") return Difficulty::Hard;
  throw InvalidInput("unknown difficulty '" + std::string(text) + "'");
}

RewardMode parse_reward_mode(std::string_view text) {
  if (text == "binary") return RewardMode::Binary;
  if (text == "soft") return RewardMode::Soft;
  if (text == "hard_allpass") return RewardMode::HardAllPass;
  throw InvalidInput("unknown reward mode '" + std::string(text) + "'");
}

void TaskSpec::validate() const {
  if (prompt_tokens.empty()) throw InvalidInput("task " + id + ": empty prompt");
  for (int t : prompt_tokens) {
    if (t < 0 || t >= vocab::kSize) throw InvalidInput("task " + id + ": prompt token out of range");
  }
  if (answer.empty()) throw InvalidInput("task " + id + ": empty answer");
  for (int t : answer) {
    if (!vocab::is_digit(t)) throw InvalidInput("task " + id + ": answer token is not a digit");
  }
  if (kind == TaskKind::MultiCheckCode) {
    if (check_count < 1) throw InvalidInput("task " + id + ": check_count must be >= 1");
    if (static_cast<int>(answer.size()) != check_count) {
      throw InvalidInput("task " + id + ": answer length must equal check_count");
    }
  } else if (answer.size() != 1) {
    throw InvalidInput("task " + id + ": binary_math answers are a single digit");
  }
}

int evaluate_chain(std::span<const int> prompt_tokens) {
  if (prompt_tokens.empty() || prompt_tokens.size() % 2 == 0) {
    throw InvalidInput("evaluate_chain: expected digit (op digit)*");
  }
  auto digit_at = [&](std::size_t i) {
    if (!vocab::is_digit(prompt_tokens[i])) throw InvalidInput("evaluate_chain: expected digit");
    return prompt_tokens[i];
  };
  int acc = digit_at(0);
  for (std::size_t i = 1; i + 1 < prompt_tokens.size(); i += 2) {
    const int rhs = digit_at(i + 1);
    switch (prompt_tokens[i]) {
      case vocab::kPlus: acc = (acc + rhs) % 10; break;
      case vocab::kMinus: acc = (acc - rhs + 10) % 10; break;
      case vocab::kTimes: acc = (acc * rhs) % 10; break;
      default: throw InvalidInput("evaluate_chain: expected operator");
    }
  }
  return acc;
}

namespace {

std::string make_task_id(const TaskSpec& spec) {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(spec.kind) + 1);
  for (int t : spec.prompt_tokens) h = hash_combine(h, static_cast<std::uint64_t>(t));
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(spec.kind == TaskKind::BinaryMath ? "math-" : "code-") +
         std::string(to_string(spec.difficulty)) + "-" + buf;
}

}  // namespace

TaskSpec gen_task(SeededRng& rng, TaskKind kind, Difficulty difficulty,
                  const TaskGenOptions& options) {
  TaskSpec spec;
  spec.kind = kind;
  spec.difficulty = difficulty;
  const bool hard = difficulty == Difficulty::Hard;
  if (kind == TaskKind::BinaryMath) {
    const int chain = hard ? options.math_chain_hard : options.math_chain_easy;
    if (chain < 1) throw InvalidInput("gen_task: chain length must be >= 1");
    static constexpr int kOps[] = {vocab::kPlus, vocab::kMinus, vocab::kTimes};
    spec.prompt_tokens.push_back(static_cast<int>(rng.uniform_index(10)));
    for (int i = 1; i < chain; ++i) {
      spec.prompt_tokens.push_back(kOps[rng.uniform_index(3)]);
      spec.prompt_tokens.push_back(static_cast<int>(rng.uniform_index(10)));
    }
    spec.answer = {evaluate_chain(spec.prompt_tokens)};
    spec.check_count = 1;
    spec.require_think_tags = options.require_think_tags.value_or(hard);
  } else {
    const int k = hard ? options.code_checks_hard : options.code_checks_easy;
    if (k < 1) throw InvalidInput("gen_task: check count must be >= 1");
    // Prompt: offset '+' x_1 ... x_K; check i expects (x_i + offset) mod 10.
    const int offset = static_cast<int>(rng.uniform_index(10));
    spec.prompt_tokens = {offset, vocab::kPlus};
    for (int i = 0; i < k; ++i) {
      const int x = static_cast<int>(rng.uniform_index(10));
      spec.prompt_tokens.push_back(x);
      spec.answer.push_back((x + offset) % 10);
    }
    spec.check_count = k;
    spec.require_think_tags = options.require_think_tags.value_or(false);
  }
  spec.id = make_task_id(spec);
  return spec;
}

ParsedResponse parse_response(std::span<const int> response) {
  ParsedResponse out;
  bool inside = false;
  std::ptrdiff_t open_at = -1;
  std::ptrdiff_t close_at = -1;
  std::ptrdiff_t first_answer_at = -1;
  for (std::size_t i = 0; i < response.size(); ++i) {
    const int t = response[i];
    if (t == vocab::kThinkOpen) {
      ++out.think_opens;
      inside = true;
      if (open_at < 0) open_at = static_cast<std::ptrdiff_t>(i);
    } else if (t == vocab::kThinkClose) {
      ++out.think_closes;
      inside = false;
      if (close_at < 0) close_at = static_cast<std::ptrdiff_t>(i);
    } else if (vocab::is_digit(t) && !inside) {
      if (first_answer_at < 0) first_answer_at = static_cast<std::ptrdiff_t>(i);
      out.answer_digits.push_back(t);
    }
  }
  out.tags_well_formed = out.think_opens == 1 && out.think_closes == 1 && open_at < close_at &&
                         (first_answer_at < 0 || close_at < first_answer_at);
  return out;
}

bool response_complete(const TaskSpec& spec, std::span<const int> response) {
  std::size_t digits = 0;
  bool inside = false;
  for (int t : response) {
    if (t == vocab::kThinkOpen) {
      inside = true;
    } else if (t == vocab::kThinkClose) {
      inside = false;
    } else if (vocab::is_digit(t) && !inside) {
      ++digits;
    }
  }
  return digits >= spec.answer.size();
}

RewardOutcome verify_binary(std::span<const int> response, const TaskSpec& spec) {
  if (spec.kind != TaskKind::BinaryMath) throw InvalidInput("verify_binary: task is not binary_math");
  const ParsedResponse parsed = parse_response(response);
  RewardOutcome out;
  out.total = 1;
  out.tag_violation = spec.require_think_tags && !parsed.tags_well_formed;
  const bool correct = parsed.answer_digits == spec.answer;
  out.passes = correct ? 1 : 0;
  out.value = (correct && !out.tag_violation) ? 1.0 : -1.0;
  return out;
}

namespace {

RewardOutcome count_checks(std::span<const int> response, const TaskSpec& spec) {
  if (spec.kind != TaskKind::MultiCheckCode) {
    throw InvalidInput("code verifier: task is not multi_check_code");
  }
  const ParsedResponse parsed = parse_response(response);
  RewardOutcome out;
  out.total = spec.check_count;
  out.tag_violation = spec.require_think_tags && !parsed.tags_well_formed;
  const std::size_t n = std::min(parsed.answer_digits.size(), spec.answer.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (parsed.answer_digits[i] == spec.answer[i]) ++out.passes;
  }
  return out;
}

}  // namespace

RewardOutcome verify_soft(std::span<const int> response, const TaskSpec& spec) {
  RewardOutcome out = count_checks(response, spec);
  out.value = out.tag_violation ? 0.0 : static_cast<double>(out.passes) / out.total;
  return out;
}

RewardOutcome verify_hard_allpass(std::span<const int> response, const TaskSpec& spec) {
  RewardOutcome out = count_checks(response, spec);
  out.value = (!out.tag_violation && out.passes == out.total) ? 1.0 : -1.0;
  return out;
}

RewardOutcome score_response(std::span<const int> response, const TaskSpec& spec,
                             RewardMode mode) {
  switch (mode) {
    case RewardMode::Binary: return verify_binary(response, spec);
    case RewardMode::Soft: return verify_soft(response, spec);
    case RewardMode::HardAllPass: return verify_hard_allpass(response, spec);
  }
  throw InvalidInput("score_response: unknown reward mode");
}

RewardMode default_reward_mode(TaskKind kind) {
  return kind == TaskKind::BinaryMath ? RewardMode::Binary : RewardMode::Soft;
}

std::pair<double, double> reward_range(RewardMode mode) {
  return mode == RewardMode::Soft ? std::pair{0.0, 1.0} : std::pair{-1.0, 1.0};
}

std::vector<int> reference_response(const TaskSpec& spec) {
  std::vector<int> out;
  if (spec.require_think_tags) {
    out.push_back(vocab::kThinkOpen);
    out.push_back(vocab::kThinkClose);
  }
  out.insert(out.end(), spec.answer.begin(), spec.answer.end());
  return out;
}

std::string task_to_json_line(const TaskSpec& spec) {
  nlohmann::json j = {
      {"format", kTaskFormat},
      {"id", spec.id},
      {"prompt", spec.prompt_tokens},
      {"kind", to_string(spec.kind)},
      {"answer", spec.answer},
      {"check_count", spec.check_count},
      {"require_think_tags", spec.require_think_tags},
      {"difficulty", to_string(spec.difficulty)},
  };
  return j.dump();
}

TaskSpec task_from_json_line(std::string_view line) {
  const nlohmann::json j = nlohmann::json::parse(line);
  if (j.value("format", std::string{}) != kTaskFormat) {
    throw InvalidInput("task record: missing or unsupported format tag");
  }
  TaskSpec spec;
  spec.id = j.at("id").get<std::string>();
  spec.prompt_tokens = j.at("prompt").get<std::vector<int>>();
  spec.kind = parse_task_kind(j.at("kind").get<std::string>());
  spec.answer = j.at("answer").get<std::vector<int>>();
  spec.check_count = j.at("check_count").get<int>();
  spec.require_think_tags = j.at("require_think_tags").get<bool>();
  spec.difficulty = parse_difficulty(j.at("difficulty").get<std::string>());
  spec.validate();
  return spec;
}

void write_tasks(std::ostream& out, std::span<const TaskSpec> tasks) {
  for (const TaskSpec& t : tasks) out << task_to_json_line(t) << '\n';
}

std::vector<TaskSpec> read_tasks(std::istream& in) {
  std::vector<TaskSpec> tasks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    tasks.push_back(task_from_json_line(line));
  }
  return tasks;
}

}  // namespace cliplab
