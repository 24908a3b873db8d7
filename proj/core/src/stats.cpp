#include "tfnas/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <unordered_map>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace {

void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("rank correlation: lists differ in length");
  if (x.size() < 2) throw ContractError("rank correlation needs at least 2 values");
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(x.begin(), x.end(), finite) || !std::all_of(y.begin(), y.end(), finite)) {
    throw DomainError("rank correlation: non-finite value");
  }
}

// Pairs tied within runs of equal values of a sorted sequence.
template <typename It, typename Eq>
std::int64_t tied_pairs(It first, It last, Eq eq) {
  std::int64_t total = 0;
  while (first != last) {
    auto run = first + 1;
    while (run != last && eq(*first, *run)) ++run;
    const auto len = static_cast<std::int64_t>(run - first);
    total += len * (len - 1) / 2;
    first = run;
  }
  return total;
}

// Sorts `v` and returns the number of inversions.
std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buffer, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const auto mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(v, buffer, lo, mid) + merge_count(v, buffer, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buffer[k++] = v[j++];
    } else {
      buffer[k++] = v[i++];
    }
  }
  while (i < mid) buffer[k++] = v[i++];
  while (j < hi) buffer[k++] = v[j++];
  std::copy(buffer.begin() + static_cast<std::ptrdiff_t>(lo), buffer.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace

std::optional<double> kendall_tau(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const auto n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });

  const auto pairs = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  const auto x_ties = tied_pairs(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] == x[b]; });
  const auto joint_ties = tied_pairs(order.begin(), order.end(),
                                     [&](std::size_t a, std::size_t b) { return x[a] == x[b] && y[a] == y[b]; });

  std::vector<double> ys(n), buffer(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
  const auto swaps = merge_count(ys, buffer, 0, n);
  const auto y_ties = tied_pairs(ys.begin(), ys.end(), [](double a, double b) { return a == b; });

  if (x_ties == pairs || y_ties == pairs) return std::nullopt;
  const auto numerator = pairs - x_ties - y_ties + joint_ties - 2 * swaps;
  const auto denominator = std::sqrt(static_cast<double>(pairs - x_ties) * static_cast<double>(pairs - y_ties));
  return std::clamp(static_cast<double>(numerator) / denominator, -1.0, 1.0);
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  const auto n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    auto j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (auto k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

std::optional<double> spearman_rho(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  const double mean = 0.5 * static_cast<double>(x.size() + 1);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean, dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationReport build_report(std::string metric_id, std::span<const GenomeScore> scores,
                               std::span<const BenchmarkRecord> records, int performance_sign) {
  if (performance_sign != 1 && performance_sign != -1) throw ContractError("performance sign must be +1 or -1");
  std::unordered_map<std::string, double> trained;
  for (const auto& r : records) trained.emplace(genome_key(r.genome), r.trained_score);

  CorrelationReport report;
  report.metric_id = std::move(metric_id);
  std::size_t joined = 0;
  for (const auto& s : scores) {
    const auto it = trained.find(s.genome_key);
    if (it == trained.end()) continue;
    ++joined;
    if (s.flagged || !std::isfinite(s.value)) {
      ++report.n_discarded;
      continue;
    }
    report.pairs.push_back({s.genome_key, s.value, performance_sign * it->second});
  }
  if (joined == 0) throw ContractError("no scored genome matches the benchmark table");
  report.n_evaluated = report.pairs.size();

  if (report.n_evaluated < 2) {
    report.flag = "too_few_pairs";
    return report;
  }
  std::vector<double> m, p;
  for (const auto& pair : report.pairs) {
    m.push_back(pair.metric);
    p.push_back(pair.performance);
  }
  report.kendall_tau = kendall_tau(m, p);
  report.spearman_rho = spearman_rho(m, p);
  if (!report.kendall_tau || !report.spearman_rho) {
    const bool metric_tied = std::all_of(m.begin(), m.end(), [&](double v) { return v == m.front(); });
    report.flag = metric_tied ? "metric_all_tied" : "performance_all_tied";
  }
  return report;
}

}  // namespace tfnas
