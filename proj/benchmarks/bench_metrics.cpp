#include <benchmark/benchmark.h>

#include <random>

#include "tfnas/metrics.hpp"

namespace tfnas {
namespace {

Minibatch batch_of(std::size_t n, std::size_t t, std::size_t vocab, bool masked) {
  std::mt19937_64 rng(7);
  Minibatch b{n, t, std::vector<std::int64_t>(n * t), std::vector<std::int64_t>(n * t)};
  for (std::size_t i = 0; i < n * t; ++i) {
    b.tokens[i] = 2 + static_cast<std::int64_t>(rng() % (vocab - 2));
    b.targets[i] = masked ? kIgnoreTarget : 2 + static_cast<std::int64_t>(rng() % (vocab - 2));
  }
  if (masked)
    for (std::size_t s = 0; s < n; ++s) {
      b.targets[s * t] = b.tokens[s * t];
      b.tokens[s * t] = kMaskToken;
    }
  return b;
}

void BM_ProbeRnn(benchmark::State& state) {
  Rng rng(1);
  auto net = build_rnn(vanilla_rnn_cell(), {256, 128, 128}, rng);
  const auto batch = batch_of(static_cast<std::size_t>(state.range(0)), 16, 256, false);
  for (auto _ : state) benchmark::DoNotOptimize(run_probe(*net, batch));
}

void BM_ProbeTransformer(benchmark::State& state) {
  Rng rng(1);
  TransformerGenome g{128, 2, {{AttentionOp::kScaledDotProduct, 2, 512, 1}, {AttentionOp::kDft, 4, 512, 1}}};
  auto net = build_transformer(g, {128, 8}, rng);
  const auto batch = batch_of(static_cast<std::size_t>(state.range(0)), 8, 128, true);
  for (auto _ : state) benchmark::DoNotOptimize(run_probe(*net, batch));
}

void BM_AllMetricsTransformer(benchmark::State& state) {
  Rng rng(1);
  TransformerGenome g{128, 2, {{AttentionOp::kMultiplicative, 4, 512, 1}, {AttentionOp::kConv5, 2, 512, 1}}};
  auto net = build_transformer(g, {128, 8}, rng);
  const auto batch = batch_of(16, 8, 128, true);
  std::vector<MetricId> all;
  for (const auto& d : metric_registry()) all.push_back(d.id);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_metrics(*net, batch, all));
}

BENCHMARK(BM_ProbeRnn)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ProbeTransformer)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AllMetricsTransformer)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace tfnas
