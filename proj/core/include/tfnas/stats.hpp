#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfnas/genome.hpp"

namespace tfnas {

// Kendall tau-b in O(n log n). Empty when either list is entirely tied.
std::optional<double> kendall_tau(std::span<const double> x, std::span<const double> y);

// Pearson correlation of fractional ranks. Empty when a rank list has zero
// variance.
std::optional<double> spearman_rho(std::span<const double> x, std::span<const double> y);

// 1-based ranks; tied values share the mean of their positions.
std::vector<double> fractional_ranks(std::span<const double> values);

// One architecture's aggregated metric value.
struct GenomeScore {
  std::string genome_key;
  double value = 0.0;
  bool flagged = false;
  std::string reason;
};

struct ScorePair {
  std::string genome_key;
  double metric = 0.0;
  double performance = 0.0;  // trained score times the performance sign
};

struct CorrelationReport {
  std::string metric_id;
  bool normalized = false;
  std::size_t n_evaluated = 0;
  std::size_t n_discarded = 0;
  std::optional<double> kendall_tau;
  std::optional<double> spearman_rho;
  std::vector<ScorePair> pairs;
  // Non-empty when a coefficient is undefined.
  std::string flag;
};

// Joins scores and records on genome key, drops flagged or non-finite
// scores (counted as discarded) and correlates the rest against
// sign * trained_score. Scores without a matching record are ignored.
CorrelationReport build_report(std::string metric_id, std::span<const GenomeScore> scores,
                               std::span<const BenchmarkRecord> records, int performance_sign);

}  // namespace tfnas
