#include <benchmark/benchmark.h>

#include "tta/allocation.hpp"
#include "tta/diffusion.hpp"
#include "tta/guidance.hpp"
#include "tta/models.hpp"

using namespace tta;

namespace {

DenoiserParams toy_denoiser() {
  Rng rng(1);
  return init_denoiser(DenoiserConfig{}, rng);
}

ClassifierParams toy_classifier() {
  Rng rng(2);
  return init_classifier(ClassifierConfig{}, rng);
}

SimplexState noise_state(std::size_t n, std::size_t v, std::uint64_t seed) {
  Rng rng(seed);
  SimplexState x{ad::Tensor({n, v})};
  for (double& e : x.logits.data()) e = rng.normal(0.0, 5.0);
  return x;
}

void BM_DenoiseForward(benchmark::State& state) {
  const auto den = toy_denoiser();
  const auto x = noise_state(16, 64, 3);
  const auto plan = TimestepPlan::constant(16, 32);
  for (auto _ : state) benchmark::DoNotOptimize(denoise(den, x, plan));
}
BENCHMARK(BM_DenoiseForward);

void BM_TrainStep(benchmark::State& state) {
  auto den = toy_denoiser();
  std::vector<TokenIds> corpus(64, TokenIds(16, 0));
  for (std::size_t i = 0; i < corpus.size(); ++i)
    for (std::size_t j = 0; j < 16; ++j) corpus[i][j] = static_cast<int>((i * 7 + j * 3) % 64);
  const auto sched = cosine_schedule(64, 5.0);
  TrainOptions opts;
  opts.steps = 1;
  opts.batch_size = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) train_denoiser(den, corpus, sched, opts);
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(16);

void BM_GuidedUpdate(benchmark::State& state) {
  const auto clf = toy_classifier();
  const auto x = noise_state(16, 64, 4);
  GuidanceConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(guided_update(x, clf, cfg));
}
BENCHMARK(BM_GuidedUpdate);

void BM_Generate(benchmark::State& state) {
  const auto den = toy_denoiser();
  const auto clf = toy_classifier();
  const auto sched = cosine_schedule(64, 5.0);
  SchedulePolicy policy;
  policy.kind = state.range(0) ? PolicyKind::adaptive : PolicyKind::constant;
  GuidanceConfig cfg;
  GenerateOptions opts;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    Rng rng(seed++);
    benchmark::DoNotOptimize(generate(den, &clf, sched, policy, &cfg, opts, rng));
  }
}
BENCHMARK(BM_Generate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_BudgetedAllocation(benchmark::State& state) {
  AllocationProblem p;
  Rng rng(5);
  const auto n = static_cast<std::size_t>(state.range(0));
  for (std::size_t i = 0; i < n; ++i) p.weights.push_back(rng.uniform());
  p.var_min = 0.0;
  p.var_max = 1.0;
  p.budget = 0.5 * static_cast<double>(n);
  for (auto _ : state) benchmark::DoNotOptimize(solve_budgeted_allocation(p));
}
BENCHMARK(BM_BudgetedAllocation)->Arg(16)->Arg(1024);

void BM_DualityPoint(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(duality_schedule(0.5, 64, 10000, 7));
}
BENCHMARK(BM_DualityPoint)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
