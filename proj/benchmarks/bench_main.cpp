#include <benchmark/benchmark.h>

#include <vector>

#include "epopr/baselines.hpp"
#include "epopr/datagen.hpp"
#include "epopr/eval.hpp"
#include "epopr/forest.hpp"
#include "epopr/metrics.hpp"
#include "epopr/stasac.hpp"

using namespace epopr;

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = standard_normal(rng);
  return v;
}

const eval::Benchmark& instance() {
  static const eval::Benchmark b = [] {
    eval::BenchmarkSpec spec;
    spec.qrf.n_trees = 50;
    return eval::build_benchmark(spec);
  }();
  return b;
}

void BM_Wasserstein(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto a = normals(n, 1), b = normals(n + n / 3, 2);
  for (auto _ : st) benchmark::DoNotOptimize(metrics::wasserstein1(a, b));
  st.SetComplexityN(st.range(0));
}
BENCHMARK(BM_Wasserstein)->RangeMultiplier(4)->Range(16, 4096)->Complexity();

void BM_QrfFit(benchmark::State& st) {
  datagen::GeneratorConfig g;
  const auto data = datagen::generate(g);
  forest::QrfParams p;
  p.n_trees = static_cast<int>(st.range(0));
  for (auto _ : st) benchmark::DoNotOptimize(forest::fit(data.records, p));
}
BENCHMARK(BM_QrfFit)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_QrfPredictInterval(benchmark::State& st) {
  const auto& b = instance();
  const forest::QuantilePair q(0.9);
  std::size_t i = 0;
  for (auto _ : st) {
    const auto& r = b.data.regions[i++ % b.data.regions.size()];
    benchmark::DoNotOptimize(b.model.predict_interval_raw(r.features, q));
  }
}
BENCHMARK(BM_QrfPredictInterval);

void BM_RolloutGreedy(benchmark::State& st) {
  const auto& env = instance().env;
  const auto pol = baselines::greedy_policy();
  std::uint64_t seed = 0;
  for (auto _ : st) benchmark::DoNotOptimize(sim::rollout(env, pol, seed++));
}
BENCHMARK(BM_RolloutGreedy)->Unit(benchmark::kMicrosecond);

void BM_TspStTour(benchmark::State& st) {
  const auto& env = instance().env;
  const auto est = baselines::midpoint_estimates(env);
  for (auto _ : st) benchmark::DoNotOptimize(baselines::tsp_st_tour(env, est));
}
BENCHMARK(BM_TspStTour)->Unit(benchmark::kMicrosecond);

void BM_ActorForward(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  agent::TrainingConfig cfg;
  const auto nets = agent::make_nets(cfg);
  const auto state = normals(sim::kStateDim, 3);
  std::vector<std::vector<double>> tokens;
  for (std::size_t i = 0; i < n; ++i) tokens.push_back(normals(sim::kTokenDim, 10 + i));
  for (auto _ : st) benchmark::DoNotOptimize(agent::policy(nets.actor, state, tokens));
}
BENCHMARK(BM_ActorForward)->Arg(12)->Arg(55)->Unit(benchmark::kMicrosecond);

void BM_ActorBackward(benchmark::State& st) {
  agent::TrainingConfig cfg;
  const auto nets = agent::make_nets(cfg);
  Rng rng = make_rng(4);
  std::vector<agent::Transition> batch(static_cast<std::size_t>(st.range(0)));
  for (auto& t : batch) {
    t.state = normals(sim::kStateDim, rng());
    for (std::size_t i = 0; i < 12; ++i) t.tokens.push_back(normals(sim::kTokenDim, rng()));
  }
  std::vector<const agent::Transition*> ptrs;
  for (const auto& t : batch) ptrs.push_back(&t);
  for (auto _ : st) {
    nn::zero_grad(nets.actor.params());
    benchmark::DoNotOptimize(agent::actor_loss_backward(ptrs, nets, cfg));
  }
}
BENCHMARK(BM_ActorBackward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
