#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "cliplab/curation.hpp"
#include "cliplab/error.hpp"
#include "oracles.hpp"
#include "planted_corpus.hpp"

using namespace cliplab;
namespace t = cliplab::testing;

namespace {

CorpusRecord rec(const std::string& id, std::vector<int> prompt, TaskKind kind = TaskKind::BinaryMath) {
  CorpusRecord r;
  r.task.id = id;
  r.task.prompt_tokens = std::move(prompt);
  r.task.kind = kind;
  r.task.answer = {1};
  r.source = "test";
  return r;
}

std::vector<std::string> ids(const std::vector<CorpusRecord>& c) {
  std::vector<std::string> out;
  for (const auto& r : c) out.push_back(r.id());
  return out;
}

std::vector<CorpusRecord> random_corpus(SeededRng& rng, std::size_t n, int alphabet, std::size_t max_len) {
  std::vector<CorpusRecord> c;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> p(1 + rng.uniform_index(max_len));
    for (int& x : p) x = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(alphabet)));
    c.push_back(rec("r" + std::to_string(i), p));
  }
  return c;
}

// Oracle model that always emits `digit`.
PolicyModel constant_policy(int digit, std::size_t window = 1) {
  PolicyModel m = PolicyModel::tabular(vocab::kSize, static_cast<int>(window));
  for (std::size_t i = static_cast<std::size_t>(digit); i < m.parameter_count(); i += vocab::kSize) m.mutable_parameters()[i] = 60.0;
  return m;
}

}  // namespace

TEST_CASE("exact_dedup examples") {
  const std::vector<CorpusRecord> c{rec("a", {1, 2}), rec("b", {3}), rec("a2", {1, 2})};
  const auto d = exact_dedup(c);
  CHECK(ids(d.kept) == std::vector<std::string>{"a", "b"});
  CHECK(d.removed.size() == 1);
  CHECK(d.removed[0].record.id() == "a2");

  const std::vector<CorpusRecord> distinct{rec("x", {1}), rec("y", {2}), rec("z", {1, 1})};
  CHECK(ids(exact_dedup(distinct).kept) == ids(distinct));
}

TEST_CASE("dedup is idempotent and keeps first occurrences in order") {
  SeededRng rng(1, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_corpus(rng, 60, 3, 3);
    const auto once = exact_dedup(c);
    const auto twice = exact_dedup(once.kept);
    CHECK(ids(twice.kept) == ids(once.kept));
    CHECK(twice.removed.empty());
    std::set<std::vector<int>> seen;
    std::vector<std::string> expected;
    for (const auto& r : c) {
      if (seen.insert(r.prompt_tokens()).second) expected.push_back(r.id());
    }
    CHECK(ids(once.kept) == expected);
  }
}

TEST_CASE("ngram_filter examples") {
  std::vector<int> eval_seq;
  for (int i = 0; i < 20; ++i) eval_seq.push_back(i % 10);
  const std::vector<std::vector<int>> eval{eval_seq};

  std::vector<int> nine{9, 9, 3, 4, 5, 6, 7, 8, 9, 0, 1, 9};  // contains 3..1 (9 tokens)
  std::vector<int> eight{9, 9, 3, 4, 5, 6, 7, 8, 9, 0, 9, 9};  // only 3..0 (8 tokens)
  const std::vector<CorpusRecord> c{rec("nine", nine), rec("eight", eight), rec("short", {1, 2, 3})};
  const auto r = ngram_filter(c, eval, 9);
  CHECK(ids(r.kept) == std::vector<std::string>{"eight", "short"});
  REQUIRE(r.rejected.size() == 1);
  CHECK(r.rejected[0].record.id() == "nine");

  CHECK(ngram_filter(c, std::vector<std::vector<int>>{}, 9).kept.size() == 3);
  CHECK_THROWS_AS(ngram_filter(c, eval, 0), InvalidInput);
}

TEST_CASE("ngram_filter agrees with brute force, including degenerate widths") {
  SeededRng rng(2, 0);
  for (int trial = 0; trial < 60; ++trial) {
    const auto c = random_corpus(rng, 40, 4, 12);
    std::vector<std::vector<int>> eval;
    for (int i = 0; i < 3; ++i) eval.push_back(random_corpus(rng, 1, 4, 15)[0].prompt_tokens());
    const int n = 1 + static_cast<int>(rng.uniform_index(6));
    const auto r = ngram_filter(c, eval, n);
    std::vector<std::string> expect_kept;
    for (const auto& x : c) {
      const bool hit = std::any_of(eval.begin(), eval.end(), [&](const auto& e) { return t::shares_window(x.prompt_tokens(), e, n); });
      if (!hit) expect_kept.push_back(x.id());
    }
    CHECK(ids(r.kept) == expect_kept);
    CHECK(r.kept.size() + r.rejected.size() == c.size());
  }
  // n = 1: any shared token rejects. n > longest prompt: nothing rejected.
  const std::vector<CorpusRecord> c{rec("a", {1, 2}), rec("b", {3, 4})};
  const std::vector<std::vector<int>> eval{{4, 5, 6, 7}};
  CHECK(ids(ngram_filter(c, eval, 1).kept) == std::vector<std::string>{"a"});
  CHECK(ngram_filter(c, std::vector<std::vector<int>>{{1, 2}}, 3).kept.size() == 2);
}

TEST_CASE("dedup and ngram commute on the final kept set") {
  SeededRng rng(3, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = random_corpus(rng, 50, 3, 5);
    std::vector<std::vector<int>> eval{random_corpus(rng, 1, 3, 8)[0].prompt_tokens()};
    const int n = 2 + static_cast<int>(rng.uniform_index(3));
    const auto a = ngram_filter(exact_dedup(c).kept, eval, n).kept;
    const auto b = exact_dedup(ngram_filter(c, eval, n).kept).kept;
    CHECK(ids(a) == ids(b));
  }
}

TEST_CASE("passrate_filter rejects under-tested code records outright") {
  SeededRng rng(4, 0);
  TaskGenOptions o;
  o.code_checks_easy = 8;
  CorpusRecord r{gen_task(rng, TaskKind::MultiCheckCode, Difficulty::Easy, o), "s"};
  const auto res = passrate_filter(std::vector<CorpusRecord>{r}, constant_policy(0), {});
  CHECK(res.kept.empty());
  REQUIRE(res.stats.size() == 1);
  CHECK(res.stats[0].outcome == "too_few_checks");
  CHECK(res.stats[0].rollouts == 0);
}

TEST_CASE("passrate_filter threshold is strict") {
  // A one-digit math task and a policy mixing the right digit with a wrong one.
  TaskSpec task;
  task.id = "m";
  task.prompt_tokens = {2, vocab::kPlus, 3};
  task.answer = {5};
  const CorpusRecord r{task, "s"};

  auto policy_with = [](double p_right) {
    PolicyModel m = PolicyModel::tabular(vocab::kSize, 1);
    for (std::size_t row = 0; row < m.parameter_count(); row += vocab::kSize) {
      for (int a = 0; a < vocab::kSize; ++a) m.mutable_parameters()[row + static_cast<std::size_t>(a)] = -60.0;
      m.mutable_parameters()[row + 5] = std::log(p_right);
      m.mutable_parameters()[row + 6] = std::log(1 - p_right);
    }
    return m;
  };

  PassrateOptions opts;
  opts.k = 16;
  auto always = passrate_filter(std::vector<CorpusRecord>{r}, policy_with(1 - 1e-12), opts);
  CHECK(always.kept.size() == 1);
  CHECK(always.stats[0].full_passes == 16);

  auto never = passrate_filter(std::vector<CorpusRecord>{r}, constant_policy(0), opts);
  CHECK(never.kept.empty());
  CHECK(never.stats[0].outcome == "below_threshold");

  // Search seeds for exact 9/16 and 8/16 outcomes under a fair coin.
  bool saw_nine = false, saw_tie = false;
  for (std::uint64_t seed = 0; seed < 400 && !(saw_nine && saw_tie); ++seed) {
    opts.seed = seed;
    const auto res = passrate_filter(std::vector<CorpusRecord>{r}, policy_with(0.5), opts);
    if (res.stats[0].full_passes == 9) {
      saw_nine = true;
      CHECK(res.kept.size() == 1);
    }
    if (res.stats[0].full_passes == 8) {
      saw_tie = true;
      CHECK(res.kept.empty());
      CHECK(res.ties == 1);
      CHECK(res.stats[0].outcome == "tie");
    }
  }
  CHECK(saw_nine);
  CHECK(saw_tie);
}

TEST_CASE("oracle that always fails keeps nothing") {
  SeededRng rng(5, 0);
  std::vector<CorpusRecord> c;
  for (int i = 0; i < 10; ++i) c.push_back({gen_task(rng, TaskKind::BinaryMath, Difficulty::Easy), "s"});
  // Emitting an operator forever never completes an answer.
  const auto res = passrate_filter(c, constant_policy(vocab::kPlus), {});
  CHECK(res.kept.empty());
  CHECK(res.rejected.size() == 10);
}

TEST_CASE("passrate_filter is deterministic and order independent per record") {
  SeededRng rng(6, 0);
  std::vector<CorpusRecord> c;
  for (int i = 0; i < 12; ++i) c.push_back({gen_task(rng, TaskKind::MultiCheckCode, Difficulty::Hard), "s"});
  SeededRng init(1, 0);
  PolicyModel m = PolicyModel::tabular(vocab::kSize, 2, 257);
  for (double& p : m.mutable_parameters()) p = init.uniform(-1, 1);
  PassrateOptions o;
  o.min_checks = 1;
  o.threshold = 0.0;
  const auto a = passrate_filter(c, m, o);
  const auto b = passrate_filter(c, m, o);
  std::vector<CorpusRecord> rev(c.rbegin(), c.rend());
  const auto r = passrate_filter(rev, m, o);
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(a.stats[i].full_passes == b.stats[i].full_passes);
    CHECK(a.stats[i].full_passes == r.stats[c.size() - 1 - i].full_passes);
  }
  CHECK_THROWS_AS(passrate_filter(c, m, PassrateOptions{0}), InvalidInput);
}

TEST_CASE("verifier failures are flagged and excluded") {
  CorpusRecord broken = rec("broken", {1, vocab::kPlus, 2});
  broken.task.answer.clear();  // invalid task
  const auto res = passrate_filter(std::vector<CorpusRecord>{broken}, constant_policy(3), {});
  CHECK(res.kept.empty());
  CHECK(res.verifier_errors == 1);
  CHECK(res.stats[0].outcome == "verifier_error");
}

TEST_CASE("reference-fitted oracle passes its own corpus") {
  SeededRng rng(7, 0);
  std::vector<TaskSpec> tasks;
  for (int i = 0; i < 30; ++i) tasks.push_back(gen_task(rng, i % 2 ? TaskKind::BinaryMath : TaskKind::MultiCheckCode, Difficulty::Hard));
  ReferenceFitOptions fo;
  fo.shape.prompt_rows = 4096;
  fo.steps = 200;
  const PolicyModel oracle = fit_reference_policy(tasks, fo);
  std::vector<CorpusRecord> c;
  for (const auto& task : tasks) c.push_back({task, "s"});
  const auto res = passrate_filter(c, oracle, {});
  CHECK(res.kept.size() == tasks.size());
}

TEST_CASE("corpus records round-trip") {
  SeededRng rng(8, 0);
  std::vector<CorpusRecord> c;
  for (int i = 0; i < 5; ++i) c.push_back({gen_task(rng, TaskKind::MultiCheckCode, Difficulty::Easy), "src" + std::to_string(i)});
  std::stringstream ss;
  write_corpus(ss, c);
  const auto back = read_corpus(ss);
  REQUIRE(back.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(back[i].task == c[i].task);
    CHECK(back[i].source == c[i].source);
  }
  std::stringstream ev("[1,2,3]\n" + corpus_record_to_json_line(c[0]) + "\n\n");
  const auto e = read_eval_set(ev);
  REQUIRE(e.size() == 2);
  CHECK(e[0] == std::vector<int>{1, 2, 3});
  CHECK(e[1] == c[0].prompt_tokens());
  CHECK_THROWS(corpus_record_from_json_line(R"({"id":"x"})"));
}

TEST_CASE("planted corpus fixture has the advertised structure") {
  const t::PlantedCorpus pc = t::make_planted_corpus();
  CHECK(pc.corpus.size() == 1000);
  CHECK(pc.planted_duplicates.size() == 50);
  CHECK(pc.planted_contaminated.size() == 30);
  CHECK(pc.planted_undertested.size() == 20);
  std::set<std::string> all;
  for (const auto& r : pc.corpus) all.insert(r.id());
  CHECK(all.size() == 1000);
  for (const auto& r : pc.corpus) {
    const bool contaminated = std::any_of(pc.eval_set.begin(), pc.eval_set.end(),
                                          [&](const auto& e) { return t::shares_window(r.prompt_tokens(), e, 9); });
    CHECK(contaminated == (pc.planted_contaminated.count(r.id()) == 1));
    if (pc.planted_undertested.count(r.id())) CHECK(r.task.check_count < 16);
    CHECK_NOTHROW(r.task.validate());
  }
}
