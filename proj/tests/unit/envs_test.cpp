#include <doctest.h>

#include <sstream>

#include "cliplab/envs.hpp"
#include "cliplab/error.hpp"

using namespace cliplab;
using namespace cliplab::vocab;

namespace {

// Independent left-to-right evaluator over the token encoding.
int brute_force_chain(const std::vector<int>& p) {
  long long acc = p[0];
  for (std::size_t i = 1; i + 1 < p.size(); i += 2) {
    const long long x = p[i + 1];
    if (p[i] == kPlus) acc += x;
    if (p[i] == kMinus) acc -= x;
    if (p[i] == kTimes) acc *= x;
    acc = ((acc % 10) + 10) % 10;
  }
  return static_cast<int>(((acc % 10) + 10) % 10);
}

TaskSpec math_task(bool tags) {
  TaskSpec t;
  t.id = "m";
  t.prompt_tokens = {3, kPlus, 4};
  t.answer = {7};
  t.require_think_tags = tags;
  return t;
}

TaskSpec code16() {
  TaskSpec t;
  t.id = "c";
  t.kind = TaskKind::MultiCheckCode;
  t.prompt_tokens = {0, kPlus};
  for (int i = 0; i < 16; ++i) {
    t.prompt_tokens.push_back(i % 10);
    t.answer.push_back(i % 10);
  }
  t.check_count = 16;
  return t;
}

}  // namespace

TEST_CASE("gen_task is deterministic") {
  for (TaskKind k : {TaskKind::BinaryMath, TaskKind::MultiCheckCode}) {
    for (Difficulty d : {Difficulty::Easy, Difficulty::Hard}) {
      SeededRng a(5, 1);
      SeededRng b(5, 1);
      CHECK(gen_task(a, k, d) == gen_task(b, k, d));
    }
  }
}

TEST_CASE("generated math answers match an independent evaluator") {
  SeededRng rng(17, 0);
  for (int i = 0; i < 500; ++i) {
    const Difficulty d = i % 2 ? Difficulty::Hard : Difficulty::Easy;
    const TaskSpec t = gen_task(rng, TaskKind::BinaryMath, d);
    CHECK(t.prompt_tokens.size() == (d == Difficulty::Hard ? 15u : 5u));
    CHECK(t.answer == std::vector<int>{brute_force_chain(t.prompt_tokens)});
    CHECK(t.require_think_tags == (d == Difficulty::Hard));
    CHECK_NOTHROW(t.validate());
  }
}

TEST_CASE("generated code tasks") {
  SeededRng rng(18, 0);
  const TaskSpec hard = gen_task(rng, TaskKind::MultiCheckCode, Difficulty::Hard);
  CHECK(hard.check_count == 16);
  CHECK(hard.answer.size() == 16);
  const TaskSpec easy = gen_task(rng, TaskKind::MultiCheckCode, Difficulty::Easy);
  CHECK(easy.check_count == 4);
  for (std::size_t i = 0; i < easy.answer.size(); ++i) {
    CHECK(easy.answer[i] == (easy.prompt_tokens[i + 2] + easy.prompt_tokens[0]) % 10);
  }
}

TEST_CASE("task validation") {
  TaskSpec t = code16();
  CHECK_NOTHROW(t.validate());
  t.check_count = 0;
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  t = code16();
  t.answer[3] = kPlus;
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  t = code16();
  t.prompt_tokens.push_back(kSize);
  CHECK_THROWS_AS(t.validate(), InvalidInput);
}

TEST_CASE("verify_binary examples") {
  const TaskSpec t = math_task(true);
  auto r = verify_binary(std::vector<int>{kThinkOpen, 2, kThinkClose, 7}, t);
  CHECK(r.value == 1.0);
  CHECK_FALSE(r.tag_violation);
  r = verify_binary(std::vector<int>{kThinkOpen, 7}, t);
  CHECK(r.value == -1.0);
  CHECK(r.tag_violation);
  r = verify_binary(std::vector<int>{kThinkOpen, kThinkClose, 6}, t);
  CHECK(r.value == -1.0);
  CHECK_FALSE(r.tag_violation);
  // Answer before the think region is malformed.
  r = verify_binary(std::vector<int>{7, kThinkOpen, kThinkClose}, t);
  CHECK(r.value == -1.0);

  const TaskSpec plain = math_task(false);
  CHECK(verify_binary(std::vector<int>{7}, plain).value == 1.0);
  CHECK(verify_binary(std::vector<int>{8}, plain).value == -1.0);
  CHECK(verify_binary(std::vector<int>{kPlus}, plain).value == -1.0);
  // Pure function.
  const std::vector<int> resp{kThinkOpen, kThinkClose, 7};
  CHECK(verify_binary(resp, t).value == verify_binary(resp, t).value);
}

TEST_CASE("verify_soft examples") {
  const TaskSpec t = code16();
  std::vector<int> resp = t.answer;
  for (std::size_t i = 4; i < 16; ++i) resp[i] = (resp[i] + 1) % 10;
  auto r = verify_soft(resp, t);
  CHECK(r.value == 0.25);
  CHECK(r.passes == 4);
  CHECK(r.total == 16);
  CHECK(verify_soft(t.answer, t).value == 1.0);
  std::vector<int> none = t.answer;
  for (int& x : none) x = (x + 5) % 10;
  CHECK(verify_soft(none, t).value == 0.0);
  CHECK(verify_soft(std::vector<int>{}, t).value == 0.0);
}

TEST_CASE("soft reward is monotone and meets the hard reward at the endpoints") {
  const TaskSpec t = code16();
  double last = -1.0;
  for (int passing = 0; passing <= 16; ++passing) {
    std::vector<int> resp = t.answer;
    for (int i = passing; i < 16; ++i) resp[static_cast<std::size_t>(i)] = (resp[static_cast<std::size_t>(i)] + 1) % 10;
    const double soft = verify_soft(resp, t).value;
    const double hard = verify_hard_allpass(resp, t).value;
    CHECK(soft >= last);
    last = soft;
    CHECK(hard == (passing == 16 ? 1.0 : -1.0));
    if (passing == 0) CHECK(soft == 0.0);
    if (passing == 16) CHECK(soft == 1.0);
  }
}

TEST_CASE("score_response dispatch and ranges") {
  CHECK(score_response(std::vector<int>{7}, math_task(false), RewardMode::Binary).value == 1.0);
  CHECK_THROWS_AS(score_response(std::vector<int>{7}, math_task(false), RewardMode::Soft), InvalidInput);
  CHECK_THROWS_AS(score_response(code16().answer, code16(), RewardMode::Binary), InvalidInput);
  CHECK(default_reward_mode(TaskKind::BinaryMath) == RewardMode::Binary);
  CHECK(default_reward_mode(TaskKind::MultiCheckCode) == RewardMode::Soft);
  CHECK(reward_range(RewardMode::Soft) == std::pair<double, double>{0.0, 1.0});
  CHECK(reward_range(RewardMode::HardAllPass) == std::pair<double, double>{-1.0, 1.0});
}

TEST_CASE("reference responses are correct and complete") {
  SeededRng rng(19, 0);
  for (int i = 0; i < 200; ++i) {
    const TaskKind k = i % 2 ? TaskKind::BinaryMath : TaskKind::MultiCheckCode;
    const TaskSpec t = gen_task(rng, k, i % 4 < 2 ? Difficulty::Hard : Difficulty::Easy);
    const std::vector<int> ref = reference_response(t);
    CHECK(response_complete(t, ref));
    const RewardMode mode = k == TaskKind::BinaryMath ? RewardMode::Binary : RewardMode::HardAllPass;
    CHECK(score_response(ref, t, mode).value == 1.0);
    CHECK_FALSE(response_complete(t, std::span<const int>(ref).first(ref.size() - 1)));
  }
}

TEST_CASE("parse_response") {
  const auto p = parse_response(std::vector<int>{kThinkOpen, 3, kThinkClose, 4, 5});
  CHECK(p.answer_digits == std::vector<int>{4, 5});
  CHECK(p.tags_well_formed);
  CHECK_FALSE(parse_response(std::vector<int>{kThinkOpen, kThinkOpen, kThinkClose}).tags_well_formed);
  CHECK_FALSE(parse_response(std::vector<int>{kThinkClose, kThinkOpen}).tags_well_formed);
}

TEST_CASE("task records round-trip") {
  SeededRng rng(20, 0);
  std::vector<TaskSpec> tasks;
  for (int i = 0; i < 10; ++i) tasks.push_back(gen_task(rng, i % 2 ? TaskKind::BinaryMath : TaskKind::MultiCheckCode, Difficulty::Hard));
  std::stringstream ss;
  write_tasks(ss, tasks);
  CHECK(read_tasks(ss) == tasks);
  CHECK(task_to_json_line(tasks[0]).find("cliplab.task.v1") != std::string::npos);
  CHECK_THROWS(task_from_json_line(R"({"format":"nope"})"));
  CHECK(parse_task_kind("multi_check_code") == TaskKind::MultiCheckCode);
  CHECK(parse_reward_mode("hard_allpass") == RewardMode::HardAllPass);
  CHECK_THROWS_AS(parse_difficulty("medium"), InvalidInput);
}
