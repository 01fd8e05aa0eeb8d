#include <benchmark/benchmark.h>

#include "cliplab/curation.hpp"
#include "cliplab/objectives.hpp"
#include "cliplab/policy.hpp"

using namespace cliplab;

namespace {

PolicyModel random_model(ModelKind kind) {
  SeededRng rng(11, 0);
  ModelShape shape{kind, vocab::kSize, 2, kind == ModelKind::Tabular ? std::size_t{1} << 14 : 0, 16};
  PolicyModel m = PolicyModel::from_shape(shape, rng);
  for (double& p : m.mutable_parameters()) p = rng.uniform(-0.5, 0.5);
  return m;
}

std::vector<Group> rollout(const PolicyModel& m, int prompts, int group_size) {
  SeededRng rng(12, 0);
  std::vector<Group> groups;
  for (int i = 0; i < prompts; ++i) {
    const TaskSpec task = gen_task(rng, TaskKind::BinaryMath, Difficulty::Hard);
    Group g = sample_group(m, task, group_size, 24, 1.0, rng);
    g.rewards.clear();
    for (std::size_t j = 0; j < g.trajectories.size(); ++j) {
      g.rewards.push_back(rng.uniform(0.0, 1.0) < 0.5 ? 1.0 : -1.0);
      g.trajectories[j].reward = g.rewards.back();
    }
    assign_advantages(g);
    groups.push_back(std::move(g));
  }
  return groups;
}

void BM_SurrogateBatch(benchmark::State& state) {
  const PolicyModel m = random_model(static_cast<ModelKind>(state.range(0)));
  const auto groups = rollout(m, 8, 8);
  ClipConfig cfg;
  cfg.method = Method::Gppo;
  SurrogateResult out;
  std::size_t tokens = 0;
  for (auto _ : state) {
    surrogate_batch(groups, m, cfg, {}, out);
    tokens += out.token_count;
    benchmark::DoNotOptimize(out.loss);
  }
  state.counters["tokens/s"] = benchmark::Counter(static_cast<double>(tokens), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_SurrogateBatch)->Arg(static_cast<int>(ModelKind::Tabular))->Arg(static_cast<int>(ModelKind::Feedforward));

void BM_SampleGroup(benchmark::State& state) {
  const PolicyModel m = random_model(ModelKind::Tabular);
  SeededRng rng(13, 0);
  const TaskSpec task = gen_task(rng, TaskKind::BinaryMath, Difficulty::Hard);
  for (auto _ : state) {
    Group g = sample_group(m, task, static_cast<int>(state.range(0)), 24, 1.0, rng);
    benchmark::DoNotOptimize(g.trajectories.data());
  }
}
BENCHMARK(BM_SampleGroup)->Arg(8)->Arg(64);

void BM_NgramFilter(benchmark::State& state) {
  SeededRng rng(14, 0);
  std::vector<CorpusRecord> corpus;
  for (int i = 0; i < state.range(0); ++i) {
    TaskSpec t = gen_task(rng, TaskKind::MultiCheckCode, Difficulty::Hard);
    t.id = "r" + std::to_string(i);
    corpus.push_back({t, "bench"});
  }
  std::vector<std::vector<int>> eval;
  for (int i = 0; i < 60; ++i) eval.push_back(gen_task(rng, TaskKind::MultiCheckCode, Difficulty::Hard).prompt_tokens);
  for (auto _ : state) {
    NgramResult r = ngram_filter(corpus, eval, 9);
    benchmark::DoNotOptimize(r.kept.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_NgramFilter)->Arg(1000)->Arg(10000);

void BM_GradCoeff(benchmark::State& state) {
  ClipConfig cfg;
  cfg.method = static_cast<Method>(state.range(0));
  double d = 0.01;
  for (auto _ : state) {
    benchmark::DoNotOptimize(grad_coeff(d, d < 1.5 ? 1.0 : -1.0, cfg));
    d = d > 3.0 ? 0.01 : d + 0.01;
  }
}
BENCHMARK(BM_GradCoeff)->DenseRange(0, 5);

}  // namespace

BENCHMARK_MAIN();
