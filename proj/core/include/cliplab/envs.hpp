#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cliplab/numerics.hpp"

namespace cliplab {

/// Fixed token vocabulary shared by all synthetic tasks.
namespace vocab {
inline constexpr int kDigitCount = 10;  // tokens 0..9 are the digits themselves
inline constexpr int kPlus = 10;
inline constexpr int kMinus = 11;
inline constexpr int kTimes = 12;
inline constexpr int kThinkOpen = 13;
inline constexpr int kThinkClose = 14;
inline constexpr int kSize = 15;

constexpr bool is_digit(int token) noexcept { return token >= 0 && token < kDigitCount; }
constexpr bool is_operator(int token) noexcept {
  return token == kPlus || token == kMinus || token == kTimes;
}
std::string token_name(int token);
}  // namespace vocab

enum class TaskKind { BinaryMath, MultiCheckCode };
enum class Difficulty { Easy, Hard };
enum class RewardMode { Binary, Soft, HardAllPass };

std::string_view to_string(TaskKind kind);
std::string_view to_string(Difficulty difficulty);
std::string_view to_string(RewardMode mode);
TaskKind parse_task_kind(std::string_view text);
Difficulty parse_difficulty(std::string_view text);
RewardMode parse_reward_mode(std::string_view text);

/// A synthetic prompt together with everything its verifier needs.
struct TaskSpec {
  std::string id;
  std::vector<int> prompt_tokens;
  TaskKind kind = TaskKind::BinaryMath;
  std::vector<int> answer;
  int check_count = 1;  // number of independent checks; 1 for binary_math
  bool require_think_tags = false;
  Difficulty difficulty = Difficulty::Easy;

  /// Throws InvalidInput when an invariant is broken.
  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

/// Difficulty knobs. Defaults: chain 3/8 for math, K = 4/16 for code.
struct TaskGenOptions {
  int math_chain_easy = 3;
  int math_chain_hard = 8;
  int code_checks_easy = 4;
  int code_checks_hard = 16;
  /// Overrides the default tag requirement (math: hard only; code: never).
  std::optional<bool> require_think_tags;
};

TaskSpec gen_task(SeededRng& rng, TaskKind kind, Difficulty difficulty,
                  const TaskGenOptions& options = {});

/// Left-to-right evaluation of a digit/operator chain, reduced mod 10.
int evaluate_chain(std::span<const int> prompt_tokens);

/// Structure of a response as seen by the verifiers.
struct ParsedResponse {
  std::vector<int> answer_digits;  // digits emitted outside the think region, in order
  int think_opens = 0;
  int think_closes = 0;
  bool tags_well_formed = false;  // exactly one open, then one close, then the answer
};

ParsedResponse parse_response(std::span<const int> response);

/// True once the response has emitted as many answer digits as the task expects.
bool response_complete(const TaskSpec& spec, std::span<const int> response);

struct RewardOutcome {
  double value = 0.0;
  int passes = 0;
  int total = 0;
  bool tag_violation = false;
};

/// +1 iff the answer is correct and, when required, tags are well formed; -1 otherwise.
RewardOutcome verify_binary(std::span<const int> response, const TaskSpec& spec);
/// Fraction of the check_count positions whose digit matches.
RewardOutcome verify_soft(std::span<const int> response, const TaskSpec& spec);
/// +1 iff every check passes; -1 otherwise.
RewardOutcome verify_hard_allpass(std::span<const int> response, const TaskSpec& spec);

/// Dispatches on reward mode; Binary requires binary_math, the others multi_check_code.
RewardOutcome score_response(std::span<const int> response, const TaskSpec& spec,
                             RewardMode mode);
/// The natural reward mode for a task kind (binary for math, soft for code).
RewardMode default_reward_mode(TaskKind kind);
/// (lo, hi) of the rewards a mode can produce.
std::pair<double, double> reward_range(RewardMode mode);

/// A correct, well-formed response for the task (used for demonstrations).
std::vector<int> reference_response(const TaskSpec& spec);

// Line-delimited task records: one JSON object per line tagged "cliplab.task.v1".
inline constexpr std::string_view kTaskFormat = "cliplab.task.v1";
std::string task_to_json_line(const TaskSpec& spec);
TaskSpec task_from_json_line(std::string_view line);
void write_tasks(std::ostream& out, std::span<const TaskSpec> tasks);
std::vector<TaskSpec> read_tasks(std::istream& in);

}  // namespace cliplab
