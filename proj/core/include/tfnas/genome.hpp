#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tfnas {

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// RNN cell search space
// ---------------------------------------------------------------------------

enum class CellOp { kLinear, kSum, kProduct, kTanh, kSigmoid };

std::string_view to_string(CellOp op);
std::optional<CellOp> parse_cell_op(std::string_view token);

struct CellNode {
  std::string id;
  CellOp op;
  bool operator==(const CellNode&) const = default;
};

struct CellEdge {
  std::string src;
  std::string dst;
  bool operator==(const CellEdge&) const = default;
};

// Acyclic digraph of cell operations, evaluated once per time step.
//
// Inputs x_t and h_{t-1} (and optionally c_{t-1}) are named by `x_input`,
// `h_input` and `c_input`; they are not listed in `nodes`. A linear node
// sums an independent projection of each of its in-edges plus one bias,
// so `linear(x, h)` is the vanilla recurrence W x + U h + b. Only linear
// nodes may consume x_t, whose width can differ from the hidden width.
struct RnnCellGenome {
  std::vector<CellNode> nodes;
  std::vector<CellEdge> edges;
  std::string x_input = "x";
  std::string h_input = "h";
  std::optional<std::string> c_input;
  std::string h_output;
  std::optional<std::string> c_output;

  bool operator==(const RnnCellGenome&) const = default;
};

// Throws ValidationError naming the first broken invariant.
void validate(const RnnCellGenome& genome);

// Node ids in a topological order (inputs excluded). Requires a valid genome.
std::vector<std::string> topological_order(const RnnCellGenome& genome);

// In-edge sources of `node_id`, in edge-list order.
std::vector<std::string> predecessors(const RnnCellGenome& genome, std::string_view node_id);

// The smallest cell: h_t = tanh(linear(x_t, h_{t-1})).
RnnCellGenome vanilla_rnn_cell();

// Random valid cell with at most `max_nodes` operation nodes. With
// max_nodes == 3 this is always the vanilla cell.
RnnCellGenome sample_rnn(Rng& rng, std::size_t max_nodes);

// ---------------------------------------------------------------------------
// Transformer (FlexiBERT-style) search space
// ---------------------------------------------------------------------------

enum class AttentionOp {
  kScaledDotProduct,  // self-attention
  kMultiplicative,    // self-attention with a bilinear score
  kDft,               // linear transform, discrete Fourier (real part)
  kDct,               // linear transform, discrete cosine
  kConv5,             // span-based dynamic convolution, kernel 5
  kConv9,             // span-based dynamic convolution, kernel 9
};

inline constexpr AttentionOp kAllAttentionOps[] = {AttentionOp::kScaledDotProduct, AttentionOp::kMultiplicative,
                                                   AttentionOp::kDft,
                                                   AttentionOp::kDct,
                                                   AttentionOp::kConv5,
                                                   AttentionOp::kConv9};

std::string_view to_string(AttentionOp op);
std::optional<AttentionOp> parse_attention_op(std::string_view token);
bool is_self_attention(AttentionOp op);
bool is_linear_transform(AttentionOp op);
bool is_dynamic_conv(AttentionOp op);
std::size_t conv_kernel_size(AttentionOp op);

struct EncoderLayer {
  AttentionOp op = AttentionOp::kScaledDotProduct;
  std::size_t num_heads = 2;
  std::size_t ff_dim = 512;
  std::size_t ff_stacks = 1;
  bool operator==(const EncoderLayer&) const = default;
};

struct TransformerGenome {
  std::size_t hidden_dim = 128;
  std::size_t num_layers = 2;
  std::vector<EncoderLayer> layers;
  bool operator==(const TransformerGenome&) const = default;
};

// Value sets of the grid.
inline constexpr std::size_t kHiddenDims[] = {128, 256};
inline constexpr std::size_t kLayerCounts[] = {2, 4};
inline constexpr std::size_t kHeadCounts[] = {2, 4};
inline constexpr std::size_t kFeedForwardDims[] = {512, 1024};
inline constexpr std::size_t kFeedForwardStacks[] = {1, 3};

void validate(const TransformerGenome& genome);

// Number of distinct per-layer configurations (operator x heads x ff x stacks).
std::uint64_t layer_configuration_count();
// Exact size of the grid: sum over hidden dims and layer counts of
// (per-layer configurations)^(layers).
std::uint64_t count_search_space();

// Bijection between [0, count_search_space()) and the grid.
TransformerGenome transformer_from_index(std::uint64_t index);
std::uint64_t transformer_index(const TransformerGenome& genome);

// Uniform draw over the whole grid.
TransformerGenome sample_transformer(Rng& rng);

// ---------------------------------------------------------------------------
// Either kind
// ---------------------------------------------------------------------------

using Genome = std::variant<RnnCellGenome, TransformerGenome>;

enum class SearchSpace { kRnn, kTransformer };
std::string_view to_string(SearchSpace space);
std::optional<SearchSpace> parse_search_space(std::string_view token);
SearchSpace space_of(const Genome& genome);

void validate(const Genome& genome);

// Network sizes that a genome alone does not fix.
struct RnnDims {
  std::size_t vocab = 2000;
  std::size_t embed_dim = 128;
  std::size_t hidden_dim = 128;
};

struct TransformerDims {
  std::size_t vocab = 2000;
  std::size_t max_seq_len = 32;
};

struct ModelDims {
  RnnDims rnn;
  TransformerDims transformer;
};

// Weight plus bias of a dense in -> out layer.
std::size_t linear_param_count(std::size_t in, std::size_t out);

// Trainable scalars in the network netbuild instantiates.
std::size_t param_count(const RnnCellGenome& genome, const RnnDims& dims);
std::size_t param_count(const TransformerGenome& genome, const TransformerDims& dims);
std::size_t param_count(const Genome& genome, const ModelDims& dims);

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------
//
// One genome per line, space-separated key=value fields in a fixed order:
//
//   version=1 kind=transformer hidden_dim=128 num_layers=2 layers=sdp:2:512:1|dft:4:1024:3
//   version=1 kind=rnn inputs=x,h outputs=n1 nodes=n0:linear|n1:tanh edges=x>n0|h>n0|n0>n1
//
// Layer fields are operator:heads:ff_dim:ff_stacks. RNN `inputs` lists
// x, h and optionally c; `outputs` lists h_t and optionally c_t.

inline constexpr int kGenomeFormatVersion = 1;

std::string serialize(const Genome& genome);
// `line` is only used to locate errors.
Genome deserialize(std::string_view text, std::size_t line = 1);

// Stable 16-hex-digit identity of a genome (FNV-1a of its serialized form).
std::string genome_key(const Genome& genome);

// Trained performance of one genome, ingested from an external table.
struct BenchmarkRecord {
  Genome genome;
  double trained_score = 0.0;
  std::map<std::string, std::string> metadata;
};

// Tab-separated: genome text, trained score, then optional key=value fields.
// Blank lines and lines starting with '#' are skipped.
std::vector<BenchmarkRecord> parse_benchmark(std::string_view text);
std::vector<BenchmarkRecord> load_benchmark(const std::filesystem::path& path);
std::string format_benchmark(const std::vector<BenchmarkRecord>& records);

}  // namespace tfnas
