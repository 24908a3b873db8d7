#include <benchmark/benchmark.h>

#include <random>

#include "tfnas/stats.hpp"

namespace tfnas {
namespace {

std::vector<double> tied_list(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = static_cast<double>(rng() % (n / 4 + 1));
  return v;
}

void BM_KendallTau(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = tied_list(n, 1), y = tied_list(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kendall_tau(x, y));
  state.SetComplexityN(state.range(0));
}

void BM_SpearmanRho(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = tied_list(n, 1), y = tied_list(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(spearman_rho(x, y));
  state.SetComplexityN(state.range(0));
}

BENCHMARK(BM_KendallTau)->RangeMultiplier(4)->Range(64, 16384)->Complexity(benchmark::oNLogN);
BENCHMARK(BM_SpearmanRho)->RangeMultiplier(4)->Range(64, 16384)->Complexity(benchmark::oNLogN);

}  // namespace
}  // namespace tfnas
