#include <benchmark/benchmark.h>

#include <random>

#include "tfnas/autodiff.hpp"

namespace tfnas {
namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = n(rng);
  return Tensor::from({rows, cols}, std::move(v), grad);
}

void BM_MatmulForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(matmul(tape, a, b));
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a = random_matrix(n, n, 1, true), b = random_matrix(n, n, 2, true);
  for (auto _ : state) {
    Tape tape;
    tape.backward(sum(tape, matmul(tape, a, b)));
  }
  state.SetItemsProcessed(state.iterations() * 6 * n * n * n);
}

BENCHMARK(BM_MatmulForward)->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_MatmulBackward)->RangeMultiplier(2)->Range(32, 256);

}  // namespace
}  // namespace tfnas
