#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tfnas/genome.hpp"
#include "tfnas/metrics.hpp"
#include "tfnas/netbuild.hpp"
#include "tfnas/stats.hpp"

namespace tfnas {

inline constexpr int kConfigVersion = 1;

enum class Normalization { kNormalized, kRaw, kBoth };
enum class ReportFormat { kJson, kTsv };

// Parsed run configuration. Relative paths are resolved against the
// directory holding the config file.
struct RunConfig {
  int version = kConfigVersion;
  SearchSpace search_space = SearchSpace::kRnn;
  std::vector<MetricId> metrics;
  std::vector<std::uint64_t> seeds = {0};
  std::vector<std::uint64_t> minibatches = {0};
  std::size_t batch_size = 128;
  std::size_t seq_len = 32;
  std::size_t vocab_size = 2000;
  std::size_t embed_dim = 128;
  std::size_t hidden_dim = 128;
  std::vector<std::size_t> hidden_layers = {0, 1, 2};
  Normalization normalization = Normalization::kNormalized;
  std::optional<std::filesystem::path> corpus;
  std::optional<std::filesystem::path> vocab;
  std::optional<std::filesystem::path> benchmark;
  std::optional<std::filesystem::path> genomes;
  std::size_t synthetic_tokens = 50000;
  std::filesystem::path output = "tfnas-out";
  ReportFormat format = ReportFormat::kJson;
  std::size_t workers = 1;
  int performance_sign = -1;

  ModelDims dims() const;
  std::vector<bool> normalization_variants() const;
};

// Parses `key = value` lines; '#' starts a comment. `version` must come
// first. Throws ParseError naming the line and key.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

struct Corpus {
  std::vector<std::vector<std::int64_t>> lines;
  std::vector<std::int64_t> stream;  // all lines back to back
  std::size_t oov_count = 0;
  std::size_t id_limit = 2;  // one past the largest id in use

  std::size_t size() const { return stream.size(); }
  double oov_rate() const;
};

// Vocabulary file: one `token id` pair per line, ids >= 2 (0 is the unknown
// token, 1 the mask token). Corpus: whitespace-separated tokens.
Corpus load_corpus(const std::filesystem::path& path, const std::filesystem::path& vocab_path);
Corpus tokenize(std::string_view text, std::string_view vocab_text);
// Random token stream over ids [2, vocab) for runs without a corpus.
Corpus synthetic_corpus(std::size_t vocab, std::size_t length, std::uint64_t seed);

enum class BatchMode { kNextToken, kMasked };
inline constexpr double kMaskRate = 0.15;

Minibatch sample_minibatch(const Corpus& corpus, Rng& rng, std::size_t batch_size, std::size_t seq_len,
                           BatchMode mode);

// The minibatch identified by `minibatch_id`, identical for every genome.
Minibatch minibatch_for(const Corpus& corpus, const RunConfig& config, std::uint64_t minibatch_id);

// One journal line: a metric outcome for a (genome, seed, minibatch) cell.
struct CellRecord {
  std::string genome_key;
  std::uint64_t seed = 0;
  std::uint64_t minibatch_id = 0;
  MetricOutcome outcome;
};

// Metric name with the hidden-state layer appended, e.g.
// "hidden_covariance@layer1".
std::string metric_label(MetricId id, std::optional<std::size_t> layer);

struct ScoreRow {
  std::string genome_key;
  std::string label;
  bool normalized_variant = true;  // the variant requested; see score.normalized
  MetricScore score;
};

struct ScoreSummary {
  std::vector<ScoreRow> rows;
  std::size_t computed_cells = 0;
  std::size_t reused_cells = 0;
  std::size_t flagged_rows = 0;
};

using Progress = std::function<void(std::size_t done, std::size_t total)>;

struct Workload {
  std::vector<Genome> genomes;
  std::vector<BenchmarkRecord> records;  // empty without a benchmark table
};

Workload load_workload(const RunConfig& config);
Corpus load_or_synthesize_corpus(const RunConfig& config);

// Evaluates every (genome, seed, minibatch) cell not already in the journal
// at `journal`, appending as it goes, and returns all rows in a fixed order.
ScoreSummary score_cells(const RunConfig& config, const std::vector<Genome>& genomes, const Corpus& corpus,
                         const std::vector<std::pair<std::uint64_t, std::uint64_t>>& seed_minibatch,
                         const std::filesystem::path& journal, const Progress& progress = {});

// Scores every configured cell and writes <output>/scores.tsv.
ScoreSummary score_architectures(const RunConfig& config, const Progress& progress = {});

// Averages each genome's non-degenerate cells for one label/normalization.
std::vector<GenomeScore> aggregate(const std::vector<ScoreRow>& rows, const std::string& label, bool normalized);

struct EvaluationResult {
  ScoreSummary summary;
  std::vector<CorrelationReport> reports;
};

// Scores (reusing the journal) and correlates each metric against the
// benchmark table. Writes report.json or report.tsv plus pairs/*.tsv.
EvaluationResult evaluate(const RunConfig& config, const Progress& progress = {});

struct SpreadStats {
  std::size_t count = 0;
  std::size_t flagged = 0;
  double min = kNaN;
  double max = kNaN;
  double mean = kNaN;
  double cv = kNaN;  // population std / |mean|
};

SpreadStats spread(std::span<const double> values, std::size_t flagged = 0);

enum class Sweep { kSeed, kMinibatch };

struct AblationRow {
  Sweep sweep = Sweep::kSeed;
  std::string label;
  bool normalized = false;
  std::size_t decile = 0;
  std::string genome_key;
  double trained_score = 0.0;
  SpreadStats stats;
};

struct AblationSummary {
  Sweep sweep = Sweep::kSeed;
  std::string label;
  bool normalized = false;
  std::size_t architectures = 0;  // deciles with at least one scored cell
  double max_cv = kNaN;
  double between_spread = kNaN;  // std / |mean| of per-architecture means
  bool stable = false;           // max_cv < between_spread
};

struct AblationResult {
  std::vector<std::size_t> selected;  // record indices, one per decile
  std::vector<ScoreRow> raw;
  std::vector<AblationRow> rows;
  std::vector<AblationSummary> summaries;
  std::size_t flagged_rows = 0;
};

// Record index per decile of trained score, ascending.
std::vector<std::size_t> decile_sample(const std::vector<BenchmarkRecord>& records);

// Seed sweep at the first minibatch and minibatch sweep at the first seed
// over one architecture per decile. Writes ablation.tsv, ablation_summary.tsv
// and ablation_raw.tsv.
AblationResult ablate(const RunConfig& config, const Progress& progress = {});

// Shortest round-trip text for reals in every emitted table.
std::string format_real(double v);

}  // namespace tfnas
