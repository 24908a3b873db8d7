#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tfnas/autodiff.hpp"
#include "tfnas/genome.hpp"
#include "tfnas/tensor.hpp"

namespace tfnas {

// Reserved token ids shared by corpora and networks.
inline constexpr std::int64_t kUnknownToken = 0;
inline constexpr std::int64_t kMaskToken = 1;
// Target value for positions that do not contribute to the loss.
inline constexpr std::int64_t kIgnoreTarget = -1;

// N token windows of length T, row-major [N, T].
struct Minibatch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<std::int64_t> tokens;
  std::vector<std::int64_t> targets;
};

void validate(const Minibatch& batch, std::size_t vocab);

// Named parameters in creation order.
class ParameterRegistry {
 public:
  Tensor& add(std::string name, Tensor tensor);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

  struct Entry {
    std::string name;
    Tensor tensor;
  };
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
};

// Packed binary activation pattern per input.
class ActivationCodes {
 public:
  ActivationCodes() = default;
  explicit ActivationCodes(std::size_t inputs) : rows_(inputs) {}

  // Appends numel/inputs bits per input from a tensor whose leading axis
  // (after flattening) enumerates the inputs: bit = value > threshold.
  void append(const Tensor& values, double threshold);

  std::size_t inputs() const { return rows_.size(); }
  std::size_t bit_count() const { return bits_; }
  bool empty() const { return bits_ == 0; }
  bool bit(std::size_t input, std::size_t index) const;
  // Number of positions where the codes of inputs i and j differ.
  std::size_t hamming(std::size_t i, std::size_t j) const;

 private:
  std::vector<std::vector<std::uint64_t>> rows_;
  std::size_t bits_ = 0;
};

struct HeadCapture {
  std::size_t layer = 0;
  std::size_t head = 0;
  AttentionOp op = AttentionOp::kScaledDotProduct;
  Tensor output;                 // Att_h, [N, T, hidden/heads]
  std::optional<Tensor> softmax;  // sigma_h, [N, T, T]; self-attention only
  std::vector<Tensor> weights;   // matrices W_m that drive this head
};

struct ForwardOptions {
  // Replaces the token-embedding lookup with these [N, T, E] values.
  std::optional<Tensor> input_embeddings;
  // Transformer only: multiplies head i's output (capture order) by scale[i].
  std::vector<double> head_output_scale;
};

struct ForwardResult {
  Tensor loss;
  // The [N, T, E] embedded inputs; after backward its gradient is dL/dx.
  Tensor inputs;
  // RNN: final-time-step state per stacked layer, [N, hidden].
  // Transformer: output of every encoder layer, [N, T, hidden].
  std::vector<Tensor> hidden_states;
  ActivationCodes activation_codes;
  std::vector<HeadCapture> heads;  // transformer only
};

class Network {
 public:
  virtual ~Network() = default;

  virtual SearchSpace space() const = 0;
  virtual const Genome& genome() const = 0;
  virtual std::size_t vocab() const = 0;
  virtual std::size_t embed_dim() const = 0;
  virtual ForwardResult forward(Tape& tape, const Minibatch& batch, const ForwardOptions& options = {}) = 0;

  // Embedded token values for `batch`, [N, T, E], detached from any tape.
  virtual Tensor embed(const Minibatch& batch) const = 0;

  ParameterRegistry& parameters() { return parameters_; }
  const ParameterRegistry& parameters() const { return parameters_; }

 protected:
  ParameterRegistry parameters_;
};

inline constexpr std::size_t kRnnStackDepth = 3;

// Embedding, three stacked copies of the cell with independent weights, and
// an output projection to the vocabulary.
class RnnNetwork final : public Network {
 public:
  RnnNetwork(RnnCellGenome genome, RnnDims dims, Rng& rng);

  SearchSpace space() const override { return SearchSpace::kRnn; }
  const Genome& genome() const override { return genome_; }
  const RnnCellGenome& cell() const { return std::get<RnnCellGenome>(genome_); }
  const RnnDims& dims() const { return dims_; }
  std::size_t vocab() const override { return dims_.vocab; }
  std::size_t embed_dim() const override { return dims_.embed_dim; }

  // Loss is next-token cross-entropy averaged over batch and time.
  ForwardResult forward(Tape& tape, const Minibatch& batch, const ForwardOptions& options = {}) override;
  Tensor embed(const Minibatch& batch) const override;

 private:
  Genome genome_;
  RnnDims dims_;
  std::vector<std::string> order_;
};

// Token embedding plus learned absolute positions, encoder layers per the
// genome, and a masked-token prediction head.
class TransformerNetwork final : public Network {
 public:
  TransformerNetwork(TransformerGenome genome, TransformerDims dims, Rng& rng);

  SearchSpace space() const override { return SearchSpace::kTransformer; }
  const Genome& genome() const override { return genome_; }
  const TransformerGenome& architecture() const { return std::get<TransformerGenome>(genome_); }
  const TransformerDims& dims() const { return dims_; }
  std::size_t vocab() const override { return dims_.vocab; }
  std::size_t embed_dim() const override { return architecture().hidden_dim; }
  std::size_t head_count() const;

  // Loss is cross-entropy over positions whose target is not kIgnoreTarget;
  // every sequence needs at least one such position.
  ForwardResult forward(Tape& tape, const Minibatch& batch, const ForwardOptions& options = {}) override;
  Tensor embed(const Minibatch& batch) const override;

 private:
  Genome genome_;
  TransformerDims dims_;
};

std::unique_ptr<RnnNetwork> build_rnn(const RnnCellGenome& genome, const RnnDims& dims, Rng& rng);
std::unique_ptr<TransformerNetwork> build_transformer(const TransformerGenome& genome, const TransformerDims& dims,
                                                      Rng& rng);
std::unique_ptr<Network> build_network(const Genome& genome, const ModelDims& dims, Rng& rng);

// Fixed real bases for the linear-transform operators, [T, T], scaled by
// 1/sqrt(T) (DFT, real part) or orthonormal (DCT-II).
Tensor dft_basis(std::size_t length);
Tensor dct_basis(std::size_t length);

}  // namespace tfnas
