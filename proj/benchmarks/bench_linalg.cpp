#include <benchmark/benchmark.h>

#include <random>

#include "tfnas/linalg.hpp"

namespace tfnas {
namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = n(rng);
  return Tensor::from({rows, cols}, std::move(v));
}

Tensor gram(std::size_t n) {
  Tensor m = random_matrix(n, 2 * n, 3);
  std::vector<double> g(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < 2 * n; ++k) g[i * n + j] += m[i * 2 * n + k] * m[j * 2 * n + k];
  return Tensor::from({n, n}, std::move(g));
}

void BM_JacobiSpectrum(benchmark::State& state) {
  Tensor g = gram(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(spectrum(g));
}

void BM_JacobiSingularValues(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor m = random_matrix(n, n / 2, 5);
  for (auto _ : state) benchmark::DoNotOptimize(singular_values(m));
}

void BM_LogDeterminant(benchmark::State& state) {
  Tensor g = gram(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(log_determinant(g));
}

BENCHMARK(BM_JacobiSpectrum)->RangeMultiplier(2)->Range(16, 128);
BENCHMARK(BM_JacobiSingularValues)->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_LogDeterminant)->RangeMultiplier(2)->Range(16, 128);

}  // namespace
}  // namespace tfnas
