#include <benchmark/benchmark.h>

#include <random>

#include "cosmos/backend.hpp"
#include "cosmos/features.hpp"
#include "cosmos/mcts.hpp"
#include "cosmos/ml.hpp"
#include "cosmos/preference.hpp"
#include "test_support.hpp"

using namespace cosmos;

static void BM_UcbScore(benchmark::State& state) {
  EdgeStats edge{40, 25.0, 0.625};
  std::uint64_t n = 1000;
  for (auto _ : state) {
    benchmark::DoNotOptimize(ucb_score(edge, n, 1.414));
    ++n;
  }
}
BENCHMARK(BM_UcbScore);

static void BM_SelectFrontier(benchmark::State& state) {
  const auto tree = testing::random_tree(static_cast<std::size_t>(state.range(0)), 3, true, 2);
  SearchConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(select_frontier(tree, cfg));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SelectFrontier)->RangeMultiplier(4)->Range(256, 16384)->Complexity();

static void BM_OracleSearch(benchmark::State& state) {
  testing::OracleEnvironment env(3, 4, 1);
  SearchConfig cfg;
  cfg.iterations = 200;
  cfg.schedule.later = 3;
  cfg.workers = 1;
  for (auto _ : state) benchmark::DoNotOptimize(run_search({"p"}, cfg, env.story(), env.agents()));
}
BENCHMARK(BM_OracleSearch)->Unit(benchmark::kMillisecond);

static void BM_ExtractFeatures(benchmark::State& state) {
  const auto scorer = make_service(BackendConfig::for_role(Role::scorer, "mock:1"));
  const auto embedder = make_service(BackendConfig::for_role(Role::embedder, "mock:1"));
  std::vector<std::string> bullets;
  for (int i = 0; i < state.range(0); ++i)
    bullets.push_back("The keeper climbs the tower and finds a map hidden in the lamp " +
                      std::to_string(i) + ".");
  for (auto _ : state)
    benchmark::DoNotOptimize(extract_features(bullets, 1.0, *scorer, *embedder, FeatureConfig{}));
}
BENCHMARK(BM_ExtractFeatures)->Arg(8)->Arg(32)->Unit(benchmark::kMicrosecond);

static void BM_SvmFit(benchmark::State& state) {
  const auto corpus = testing::separable_corpus(static_cast<std::size_t>(state.range(0)), 1.5, 4);
  const auto a = testing::arrays(corpus);
  ml::MedianImputer imp;
  imp.fit(a.x);
  const Eigen::MatrixXd x = imp.transform(a.x);
  std::vector<int> signs;
  for (int y : a.labels) signs.push_back(y ? 1 : -1);
  ml::SvmParams params;
  for (auto _ : state) {
    ml::SvmClassifier svm;
    svm.fit(x, signs, params);
    benchmark::DoNotOptimize(svm.decision(x));
  }
}
BENCHMARK(BM_SvmFit)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

static void BM_MinePairs(benchmark::State& state) {
  const auto tree = testing::random_tree(static_cast<std::size_t>(state.range(0)), 9, true, 3);
  const MinerConfig cfg;
  const auto templates = PromptTemplates::defaults();
  for (auto _ : state) benchmark::DoNotOptimize(mine_pairs(tree, cfg, templates, "t"));
}
BENCHMARK(BM_MinePairs)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);
BENCHMARK_MAIN();
