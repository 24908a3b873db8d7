#include "tfnas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "tfnas/autodiff.hpp"
#include "tfnas/errors.hpp"
#include "tfnas/linalg.hpp"

namespace tfnas {

namespace {

constexpr MetricDescriptor kRegistry[] = {
    {MetricId::kJacobianCovariance, "jacobian_covariance", Applicability::kBoth, true, "inputs in the minibatch"},
    {MetricId::kJacobianCosine, "jacobian_cosine", Applicability::kBoth, true, "inputs in the minibatch"},
    {MetricId::kJacobianLargeNoise, "jacobian_large_noise", Applicability::kBoth, true, "inputs in the minibatch"},
    {MetricId::kJacobianMoreNoised, "jacobian_more_noised", Applicability::kBoth, true, "inputs in the minibatch"},
    {MetricId::kSynapticSaliency, "synaptic_saliency", Applicability::kBoth, true, "trainable parameters"},
    {MetricId::kActivationDistance, "activation_distance", Applicability::kBoth, false, "activation units"},
    {MetricId::kSynapticDiversity, "synaptic_diversity", Applicability::kTransformer, true, "attention heads"},
    {MetricId::kHiddenCovariance, "hidden_covariance", Applicability::kRnn, false, "inputs in the minibatch"},
    {MetricId::kAttentionConfidence, "attention_confidence", Applicability::kTransformer, false, "attention heads"},
    {MetricId::kSoftmaxConfidence, "softmax_confidence", Applicability::kTransformer, false, "attention heads"},
    {MetricId::kAttentionImportance, "attention_importance", Applicability::kTransformer, true, "attention heads"},
    {MetricId::kParameterCount, "parameter_count", Applicability::kBoth, false, ""},
};

MetricOutcome from_mean(MetricId id, double mean, double count) {
  MetricOutcome out;
  out.metric = id;
  out.normalized = mean;
  out.raw = mean * count;
  out.feature_count = count;
  if (!std::isfinite(out.normalized) || !std::isfinite(out.raw)) {
    return degenerate(id, Degeneracy::kNonFinite, "metric value is not finite");
  }
  return out;
}

bool needs_probe(MetricId id) {
  switch (id) {
    case MetricId::kJacobianLargeNoise:
    case MetricId::kJacobianMoreNoised:
    case MetricId::kParameterCount:
      return false;
    default:
      return true;
  }
}

double population_std(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

ModelDims dims_of(const Network& net) {
  ModelDims dims;
  if (const auto* rnn = dynamic_cast<const RnnNetwork*>(&net)) dims.rnn = rnn->dims();
  if (const auto* tr = dynamic_cast<const TransformerNetwork*>(&net)) dims.transformer = tr->dims();
  return dims;
}

MetricOutcome noised_cosine(Network& net, const Minibatch& batch, MetricId id, double level, int draws,
                            std::uint64_t seed) {
  if (!(level >= 0.0)) throw ContractError("noise level must be non-negative");
  if (draws < 1) throw ContractError("noise draw count must be positive");
  const Tensor base = net.embed(batch);
  const double sigma = level * population_std(base.values());
  double total = 0.0;
  for (int draw = 0; draw < draws; ++draw) {
    std::seed_seq seq{seed, static_cast<std::uint64_t>(draw), static_cast<std::uint64_t>(id)};
    Rng rng(seq);
    Tensor noisy = base.clone();
    if (sigma > 0.0) {
      std::normal_distribution<double> noise(0.0, sigma);
      for (auto& v : noisy.mutable_values()) v += noise(rng);
    }
    const auto probe = run_probe(net, batch, noisy);
    auto one = jacobian_cosine_score(id, jacobian_rows(probe));
    if (!one.ok()) return one;
    total += one.normalized;
  }
  return from_mean(id, total / draws, static_cast<double>(batch.batch_size));
}

void require_finite_gradients(const ParameterRegistry& params) {
  for (const auto& e : params.entries()) {
    if (e.tensor.has_grad() && !all_finite(e.tensor.grad())) {
      throw NumericError("non-finite gradient for parameter '" + e.name + "'");
    }
  }
}

// Evaluates one metric; throws on contract or numeric failure.
std::vector<MetricOutcome> compute(Network& net, const Minibatch& batch, MetricId id, const Probe* probe,
                                   const MetricOptions& options) {
  if (!applies_to(id, net.space())) {
    return {degenerate(id, Degeneracy::kInapplicable,
                       std::string(to_string(id)) + " does not apply to " + std::string(to_string(net.space())))};
  }
  const auto n = static_cast<double>(batch.batch_size);
  switch (id) {
    case MetricId::kJacobianCovariance:
      return {correlation_kernel_score(id, jacobian_rows(*probe), options.kernel_offset)};
    case MetricId::kJacobianCosine:
      return {jacobian_cosine_score(id, jacobian_rows(*probe))};
    case MetricId::kJacobianLargeNoise:
      return {noised_cosine(net, batch, id, options.large_noise_level, 1, options.seed)};
    case MetricId::kJacobianMoreNoised:
      return {noised_cosine(net, batch, id, options.more_noised_level, options.more_noised_draws, options.seed)};
    case MetricId::kSynapticSaliency: {
      require_finite_gradients(net.parameters());
      double total = 0.0;
      std::size_t count = 0;
      for (const auto& e : net.parameters().entries()) {
        count += e.tensor.numel();
        if (!e.tensor.has_grad()) continue;
        const auto w = e.tensor.values();
        const auto g = e.tensor.grad();
        for (std::size_t i = 0; i < w.size(); ++i) total += options.absolute_saliency ? std::abs(g[i] * w[i]) : g[i] * w[i];
      }
      return {from_mean(id, total / static_cast<double>(count), static_cast<double>(count))};
    }
    case MetricId::kActivationDistance:
      return {activation_distance_score(probe->result.activation_codes)};
    case MetricId::kSynapticDiversity: {
      std::vector<double> per_head;
      for (const auto& head : probe->result.heads) {
        double s = 0.0;
        for (const auto& w : head.weights) s += nuclear_product(w);
        per_head.push_back(s);
      }
      return {mean_aggregate(id, per_head)};
    }
    case MetricId::kHiddenCovariance: {
      std::vector<MetricOutcome> out;
      for (auto layer : options.hidden_layers) {
        if (layer >= probe->result.hidden_states.size()) {
          throw IndexError("hidden covariance layer " + std::to_string(layer) + " out of range");
        }
        auto o = correlation_kernel_score(id, probe->result.hidden_states[layer], options.kernel_offset);
        o.layer_index = layer;
        out.push_back(std::move(o));
      }
      return out;
    }
    case MetricId::kAttentionConfidence:
    case MetricId::kSoftmaxConfidence:
    case MetricId::kAttentionImportance: {
      std::vector<double> per_head;
      for (const auto& head : probe->result.heads) {
        if (id == MetricId::kAttentionConfidence) per_head.push_back(head_confidence(head.output));
        if (id == MetricId::kAttentionImportance) {
          if (head.output.has_grad() && !all_finite(head.output.grad())) {
            throw NumericError("non-finite gradient at a head output");
          }
          per_head.push_back(head_importance(head.output));
        }
        if (id == MetricId::kSoftmaxConfidence && head.softmax) per_head.push_back(head_confidence(*head.softmax));
      }
      if (per_head.empty()) {
        return {degenerate(id, Degeneracy::kInapplicable, "architecture has no softmax attention heads")};
      }
      return {mean_aggregate(id, per_head)};
    }
    case MetricId::kParameterCount: {
      auto s = parameter_count_metric(net.genome(), dims_of(net));
      MetricOutcome o;
      o.metric = id;
      o.normalized = o.raw = s.value;
      return {o};
    }
  }
  (void)n;
  throw ContractError("unknown metric");
}

MetricScore single(Network& net, const Minibatch& batch, MetricId id, bool normalized, const MetricOptions& options) {
  std::optional<Probe> probe;
  if (needs_probe(id) && applies_to(id, net.space())) probe = run_probe(net, batch);
  auto outcomes = compute(net, batch, id, probe ? &*probe : nullptr, options);
  return outcomes.front().score(normalized, options.seed);
}

}  // namespace

std::string_view to_string(MetricId id) { return describe(id).name; }

std::optional<MetricId> parse_metric_id(std::string_view token) {
  for (const auto& d : kRegistry) {
    if (d.name == token) return d.id;
  }
  return std::nullopt;
}

std::span<const MetricDescriptor> metric_registry() { return kRegistry; }

const MetricDescriptor& describe(MetricId id) {
  for (const auto& d : kRegistry) {
    if (d.id == id) return d;
  }
  throw ContractError("unregistered metric id");
}

bool applies_to(MetricId id, SearchSpace space) {
  const auto a = describe(id).applicable_to;
  return a == Applicability::kBoth || (a == Applicability::kRnn) == (space == SearchSpace::kRnn);
}

std::string_view to_string(Degeneracy d) {
  switch (d) {
    case Degeneracy::kNone: return "ok";
    case Degeneracy::kZeroVariance: return "zero_variance";
    case Degeneracy::kZeroNorm: return "zero_norm";
    case Degeneracy::kSingularKernel: return "singular_kernel";
    case Degeneracy::kInapplicable: return "inapplicable";
    case Degeneracy::kNonFinite: return "non_finite";
    case Degeneracy::kFailed: return "failed";
  }
  return "?";
}

std::optional<Degeneracy> parse_degeneracy(std::string_view token) {
  for (auto d : {Degeneracy::kNone, Degeneracy::kZeroVariance, Degeneracy::kZeroNorm, Degeneracy::kSingularKernel,
                 Degeneracy::kInapplicable, Degeneracy::kNonFinite, Degeneracy::kFailed}) {
    if (token == to_string(d)) return d;
  }
  return std::nullopt;
}

MetricScore MetricOutcome::score(bool normalized_variant, std::uint64_t seed, std::uint64_t minibatch_id) const {
  MetricScore s;
  s.metric = metric;
  s.normalized = normalized_variant && metric != MetricId::kParameterCount;
  s.value = ok() ? (s.normalized ? normalized : raw) : kNaN;
  s.seed = seed;
  s.minibatch_id = minibatch_id;
  s.layer_index = layer_index;
  s.degeneracy = degeneracy;
  s.detail = detail;
  return s;
}

MetricOutcome degenerate(MetricId id, Degeneracy why, std::string detail) {
  MetricOutcome o;
  o.metric = id;
  o.degeneracy = why;
  o.detail = std::move(detail);
  return o;
}

// --- formula kernels ---------------------------------------------------------------

std::optional<Tensor> row_correlation(const Tensor& rows) {
  if (rows.rank() != 2) throw DimensionError("row_correlation: expected [N, D]");
  const auto n = rows.dim(0), d = rows.dim(1);
  const auto v = rows.values();
  std::vector<double> centered(v.begin(), v.end());
  for (std::size_t i = 0; i < n; ++i) {
    double* r = centered.data() + i * d;
    double mean = 0.0, peak = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      mean += r[j];
      peak = std::max(peak, std::abs(r[j]));
    }
    mean /= static_cast<double>(d);
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      r[j] -= mean;
      ss += r[j] * r[j];
    }
    if (peak == 0.0 || std::sqrt(ss / static_cast<double>(d)) <= 1e-12 * peak) return std::nullopt;
  }
  std::vector<double> c(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double acc = 0.0;
      const double* a = centered.data() + i * d;
      const double* b = centered.data() + j * d;
      for (std::size_t k = 0; k < d; ++k) acc += a[k] * b[k];
      c[i * n + j] = c[j * n + i] = acc;
    }
  }
  std::vector<double> r(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      r[i * n + j] = i == j ? 1.0 : c[i * n + j] / std::sqrt(c[i * n + i] * c[j * n + j]);
    }
  }
  return Tensor::from({n, n}, std::move(r));
}

double kernel_divergence(std::span<const double> eigenvalues, double offset) {
  double s = 0.0;
  for (double lambda : eigenvalues) s += std::log(lambda + offset) + 1.0 / (lambda + offset);
  return -s;
}

MetricOutcome correlation_kernel_score(MetricId id, const Tensor& rows, double offset) {
  const auto corr = row_correlation(rows);
  if (!corr) return degenerate(id, Degeneracy::kZeroVariance, "a row has zero variance");
  const auto eig = spectrum(*corr);
  if (eig.back() + offset <= 0.0) return degenerate(id, Degeneracy::kNonFinite, "eigenvalue below -k");
  const auto n = static_cast<double>(rows.dim(0));
  return from_mean(id, kernel_divergence(eig, offset) / n, n);
}

MetricOutcome jacobian_cosine_score(MetricId id, const Tensor& rows) {
  if (rows.rank() != 2) throw DimensionError("jacobian_cosine_score: expected [N, D]");
  const auto n = rows.dim(0), d = rows.dim(1);
  if (n < 2) throw ContractError("jacobian cosine needs at least 2 rows");
  std::vector<double> unit(rows.values().begin(), rows.values().end());
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += unit[i * d + k] * unit[i * d + k];
    norm = std::sqrt(norm);
    if (norm == 0.0) return degenerate(id, Degeneracy::kZeroNorm, "Jacobian row " + std::to_string(i) + " is zero");
    for (std::size_t k = 0; k < d; ++k) unit[i * d + k] /= norm;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += unit[i * d + k] * unit[j * d + k];
      total += 2.0 * std::pow(std::abs(dot), 1.0 / 20.0);
    }
  }
  const double pairs = static_cast<double>(n * n - n);
  return from_mean(id, 1.0 - total / pairs, static_cast<double>(n));
}

MetricOutcome activation_distance_score(const ActivationCodes& codes) {
  const auto id = MetricId::kActivationDistance;
  if (codes.empty()) return degenerate(id, Degeneracy::kInapplicable, "network has no binarizable activations");
  const auto n = codes.inputs();
  if (n < 2) throw ContractError("activation distance needs at least 2 inputs");
  const auto units = static_cast<double>(codes.bit_count());
  std::vector<double> k(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const auto h = codes.hamming(i, j);
      if (i != j && h == 0) {
        return degenerate(id, Degeneracy::kSingularKernel,
                          "inputs " + std::to_string(i) + " and " + std::to_string(j) + " share an activation code");
      }
      k[i * n + j] = k[j * n + i] = units - static_cast<double>(h);
    }
  }
  const auto det = log_determinant(Tensor::from({n, n}, std::move(k)));
  if (det.singular()) return degenerate(id, Degeneracy::kSingularKernel, "activation kernel is singular");
  MetricOutcome o;
  o.metric = id;
  o.raw = det.log_abs;
  o.normalized = det.log_abs - static_cast<double>(n) * std::log(units);
  o.feature_count = units;
  return o;
}

double nuclear_product(const Tensor& weight, const Tensor& gradient) {
  return nuclear_norm(gradient) * nuclear_norm(weight);
}

double nuclear_product(const Tensor& weight) {
  if (!weight.has_grad()) return 0.0;
  const auto g = weight.grad();
  if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) return 0.0;
  return nuclear_product(weight, Tensor::from(weight.shape(), std::vector<double>(g.begin(), g.end())));
}

double head_confidence(const Tensor& capture) {
  const auto n = capture.dim(0);
  const auto per = capture.numel() / n;
  const auto v = capture.values();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += std::abs(*std::max_element(v.begin() + static_cast<std::ptrdiff_t>(i * per),
                                        v.begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
  }
  return total / static_cast<double>(n);
}

double head_importance(const Tensor& output) {
  if (!output.has_grad()) return 0.0;
  const auto v = output.values();
  const auto g = output.grad();
  double dot = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * g[i];
  return std::abs(dot);
}

MetricOutcome mean_aggregate(MetricId id, std::span<const double> values) {
  if (values.empty()) return degenerate(id, Degeneracy::kInapplicable, "nothing to aggregate");
  double total = 0.0;
  for (double v : values) total += v;
  const auto count = static_cast<double>(values.size());
  return from_mean(id, total / count, count);
}

// --- network-level ---------------------------------------------------------------------

Probe run_probe(Network& net, const Minibatch& batch, std::optional<Tensor> input_embeddings) {
  net.parameters().zero_grad();
  Tape tape;
  ForwardOptions options;
  if (input_embeddings) {
    input_embeddings->set_requires_grad(true);
    input_embeddings->zero_grad();
    options.input_embeddings = std::move(input_embeddings);
  }
  Probe probe{net.forward(tape, batch, options), &net};
  tape.backward(probe.result.loss);
  return probe;
}

Tensor jacobian_rows(const Probe& probe) {
  const auto& x = probe.result.inputs;
  const auto n = x.dim(0);
  const auto width = x.numel() / n;
  std::vector<double> rows(x.numel(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), rows.begin());
  if (!all_finite(rows)) throw NumericError("non-finite input Jacobian");
  return Tensor::from({n, width}, std::move(rows));
}

std::vector<MetricOutcome> evaluate_metrics(Network& net, const Minibatch& batch, std::span<const MetricId> ids,
                                            const MetricOptions& options) {
  std::optional<Probe> probe;
  std::string probe_error;
  Degeneracy probe_failure = Degeneracy::kFailed;
  const bool wanted = std::any_of(ids.begin(), ids.end(),
                                  [&](MetricId id) { return needs_probe(id) && applies_to(id, net.space()); });
  if (wanted) {
    try {
      probe = run_probe(net, batch);
    } catch (const NumericError& e) {
      probe_error = e.what();
      probe_failure = Degeneracy::kNonFinite;
    } catch (const Error& e) {
      probe_error = e.what();
    }
  }
  std::vector<MetricOutcome> out;
  for (auto id : ids) {
    if (needs_probe(id) && applies_to(id, net.space()) && !probe) {
      out.push_back(degenerate(id, probe_failure, probe_error));
      continue;
    }
    try {
      for (auto& o : compute(net, batch, id, probe ? &*probe : nullptr, options)) out.push_back(std::move(o));
    } catch (const NumericError& e) {
      out.push_back(degenerate(id, Degeneracy::kNonFinite, e.what()));
    } catch (const Error& e) {
      out.push_back(degenerate(id, Degeneracy::kFailed, e.what()));
    }
  }
  return out;
}

MetricOutcome evaluate_metric(Network& net, const Minibatch& batch, MetricId id, const MetricOptions& options) {
  const MetricId ids[] = {id};
  return evaluate_metrics(net, batch, ids, options).front();
}

MetricScore jacobian_covariance(Network& net, const Minibatch& batch, bool normalized) {
  return single(net, batch, MetricId::kJacobianCovariance, normalized, {});
}

MetricScore jacobian_cosine(Network& net, const Minibatch& batch, bool normalized) {
  return single(net, batch, MetricId::kJacobianCosine, normalized, {});
}

MetricScore jacobian_noised(Network& net, const Minibatch& batch, double noise_level, NoiseVariant variant,
                            std::uint64_t seed, bool normalized) {
  if (!(noise_level > 0.0)) throw ContractError("jacobian_noised: noise level must be positive");
  MetricOptions options;
  options.seed = seed;
  options.large_noise_level = options.more_noised_level = noise_level;
  const auto id = variant == NoiseVariant::kLarge ? MetricId::kJacobianLargeNoise : MetricId::kJacobianMoreNoised;
  return single(net, batch, id, normalized, options);
}

MetricScore synaptic_saliency(Network& net, const Minibatch& batch, bool normalized, bool absolute) {
  MetricOptions options;
  options.absolute_saliency = absolute;
  return single(net, batch, MetricId::kSynapticSaliency, normalized, options);
}

MetricScore activation_distance(Network& net, const Minibatch& batch, bool normalized) {
  return single(net, batch, MetricId::kActivationDistance, normalized, {});
}

MetricScore synaptic_diversity(TransformerNetwork& net, const Minibatch& batch, bool normalized) {
  return single(net, batch, MetricId::kSynapticDiversity, normalized, {});
}

MetricScore hidden_covariance(RnnNetwork& net, const Minibatch& batch, std::size_t layer_index, bool normalized) {
  if (layer_index >= kRnnStackDepth) throw IndexError("hidden covariance layer must be 0, 1 or 2");
  MetricOptions options;
  options.hidden_layers = {layer_index};
  return single(net, batch, MetricId::kHiddenCovariance, normalized, options);
}

MetricScore attention_confidence(TransformerNetwork& net, const Minibatch& batch, bool normalized) {
  return single(net, batch, MetricId::kAttentionConfidence, normalized, {});
}

MetricScore softmax_confidence(TransformerNetwork& net, const Minibatch& batch, bool normalized) {
  return single(net, batch, MetricId::kSoftmaxConfidence, normalized, {});
}

MetricScore attention_importance(TransformerNetwork& net, const Minibatch& batch, bool normalized) {
  return single(net, batch, MetricId::kAttentionImportance, normalized, {});
}

MetricScore parameter_count_metric(const Genome& genome, const ModelDims& dims) {
  MetricScore s;
  s.metric = MetricId::kParameterCount;
  s.value = static_cast<double>(param_count(genome, dims));
  s.normalized = false;
  return s;
}

}  // namespace tfnas
