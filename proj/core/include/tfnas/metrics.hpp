#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tfnas/genome.hpp"
#include "tfnas/netbuild.hpp"
#include "tfnas/tensor.hpp"

namespace tfnas {

enum class MetricId {
  kJacobianCovariance,
  kJacobianCosine,
  kJacobianLargeNoise,
  kJacobianMoreNoised,
  kSynapticSaliency,
  kActivationDistance,
  kSynapticDiversity,
  kHiddenCovariance,
  kAttentionConfidence,
  kSoftmaxConfidence,
  kAttentionImportance,
  kParameterCount,
};

std::string_view to_string(MetricId id);
std::optional<MetricId> parse_metric_id(std::string_view token);

enum class Applicability { kRnn, kTransformer, kBoth };

struct MetricDescriptor {
  MetricId id;
  std::string_view name;
  Applicability applicable_to;
  bool needs_gradients;
  // What the normalized variant divides by; empty if never normalized.
  std::string_view normalizer;
};

// Every metric, in a fixed order.
std::span<const MetricDescriptor> metric_registry();
const MetricDescriptor& describe(MetricId id);
bool applies_to(MetricId id, SearchSpace space);

enum class Degeneracy {
  kNone,
  kZeroVariance,    // a row of the correlated matrix is constant
  kZeroNorm,        // a Jacobian row is identically zero
  kSingularKernel,  // activation kernel has zero determinant
  kInapplicable,    // metric undefined for this architecture
  kNonFinite,       // evaluation produced NaN/Inf
  kFailed,          // evaluation threw; see detail
};

std::string_view to_string(Degeneracy d);
std::optional<Degeneracy> parse_degeneracy(std::string_view token);

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// A metric's scalar output for one (architecture, seed, minibatch) cell.
struct MetricScore {
  MetricId metric = MetricId::kParameterCount;
  double value = kNaN;
  bool normalized = false;
  std::uint64_t seed = 0;
  std::uint64_t minibatch_id = 0;
  std::optional<std::size_t> layer_index;
  Degeneracy degeneracy = Degeneracy::kNone;
  std::string detail;

  bool ok() const { return degeneracy == Degeneracy::kNone; }
};

// Both readings of one metric evaluation.
//
// For mean-aggregated metrics `raw == normalized * feature_count` holds
// exactly; activation distance normalizes its kernel instead and parameter
// count is never normalized.
struct MetricOutcome {
  MetricId metric = MetricId::kParameterCount;
  std::optional<std::size_t> layer_index;
  double normalized = kNaN;
  double raw = kNaN;
  double feature_count = 1.0;
  Degeneracy degeneracy = Degeneracy::kNone;
  std::string detail;

  bool ok() const { return degeneracy == Degeneracy::kNone; }
  MetricScore score(bool normalized_variant, std::uint64_t seed = 0, std::uint64_t minibatch_id = 0) const;
};

MetricOutcome degenerate(MetricId id, Degeneracy why, std::string detail);

// ---------------------------------------------------------------------------
// Formula kernels. Pure functions of already-extracted quantities.
// ---------------------------------------------------------------------------

inline constexpr double kKernelOffset = 1e-5;

// Pearson correlation between the rows of `rows` ([N, D]), each row centered
// on its own mean. Empty when some row has zero variance.
std::optional<Tensor> row_correlation(const Tensor& rows);

// -sum_n (log(lambda_n + k) + 1 / (lambda_n + k)).
double kernel_divergence(std::span<const double> eigenvalues, double offset = kKernelOffset);

// Correlation of `rows`, its spectrum, and the kernel divergence; feature
// count is the number of rows.
MetricOutcome correlation_kernel_score(MetricId id, const Tensor& rows, double offset = kKernelOffset);

// 1 - (1/(N^2-N)) sum_{i != j} |(J J^T)_ij|^(1/20) over unit-normalized rows.
MetricOutcome jacobian_cosine_score(MetricId id, const Tensor& rows);

// log|det K| with K_ij = N_A - hamming(code_i, code_j). Normalized variant
// uses K / N_A.
MetricOutcome activation_distance_score(const ActivationCodes& codes);

// ||gradient||_nuc * ||weight||_nuc.
double nuclear_product(const Tensor& weight, const Tensor& gradient);
// Same, reading the weight's own gradient buffer; zero when it has none.
double nuclear_product(const Tensor& weight);

// (1/N) sum_n |max(x_n)| over the leading axis of `capture`.
double head_confidence(const Tensor& capture);

// |sum(output * d loss / d output)|; zero when no gradient reached the head.
double head_importance(const Tensor& output);

// Mean (normalized) and sum (raw) over per-unit values.
MetricOutcome mean_aggregate(MetricId id, std::span<const double> values);

// ---------------------------------------------------------------------------
// Network-level evaluation
// ---------------------------------------------------------------------------

struct MetricOptions {
  std::uint64_t seed = 0;  // noise draws
  double large_noise_level = 1.0;
  double more_noised_level = 0.5;
  int more_noised_draws = 3;
  bool absolute_saliency = true;
  std::vector<std::size_t> hidden_layers = {0, 1, 2};
  double kernel_offset = kKernelOffset;
};

// One forward + backward pass with every capture a metric reads.
struct Probe {
  ForwardResult result;
  const Network* network = nullptr;
};

// Zeroes parameter gradients, runs forward and backward. With
// `input_embeddings` the given values become the differentiated inputs.
Probe run_probe(Network& net, const Minibatch& batch, std::optional<Tensor> input_embeddings = std::nullopt);

// Per-input Jacobian rows dL/dx_n, [N, T * E], from a probe.
Tensor jacobian_rows(const Probe& probe);

// Evaluates `ids` on one (network, minibatch) pair, sharing a single probe
// across the gradient metrics. Hidden covariance yields one outcome per
// requested layer. Metrics that do not apply come back as kInapplicable.
std::vector<MetricOutcome> evaluate_metrics(Network& net, const Minibatch& batch, std::span<const MetricId> ids,
                                            const MetricOptions& options = {});

MetricOutcome evaluate_metric(Network& net, const Minibatch& batch, MetricId id, const MetricOptions& options = {});

// Named single-metric entry points.
MetricScore jacobian_covariance(Network& net, const Minibatch& batch, bool normalized = true);
MetricScore jacobian_cosine(Network& net, const Minibatch& batch, bool normalized = true);
enum class NoiseVariant { kLarge, kMore };
MetricScore jacobian_noised(Network& net, const Minibatch& batch, double noise_level, NoiseVariant variant,
                            std::uint64_t seed, bool normalized = true);
MetricScore synaptic_saliency(Network& net, const Minibatch& batch, bool normalized = true,
                              bool absolute = true);
MetricScore activation_distance(Network& net, const Minibatch& batch, bool normalized = true);
MetricScore synaptic_diversity(TransformerNetwork& net, const Minibatch& batch, bool normalized = true);
MetricScore hidden_covariance(RnnNetwork& net, const Minibatch& batch, std::size_t layer_index,
                              bool normalized = true);
MetricScore attention_confidence(TransformerNetwork& net, const Minibatch& batch, bool normalized = true);
MetricScore softmax_confidence(TransformerNetwork& net, const Minibatch& batch, bool normalized = true);
MetricScore attention_importance(TransformerNetwork& net, const Minibatch& batch, bool normalized = true);
MetricScore parameter_count_metric(const Genome& genome, const ModelDims& dims);

}  // namespace tfnas
