#include "tfnas/netbuild.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace {

Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

double fan_in_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

void check_finite(const Tensor& t, const std::string& where) {
  if (!all_finite(t.values())) throw NumericError("non-finite values in forward pass at " + where);
}

std::string node_weight_name(std::size_t layer, const std::string& node, const std::string& src) {
  return "cell" + std::to_string(layer) + "." + node + ".w_" + src;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(tape, matmul(tape, x, w), b);
}

}  // namespace

void validate(const Minibatch& batch, std::size_t vocab) {
  if (batch.batch_size < 2) throw ContractError("minibatch needs at least 2 inputs");
  if (batch.seq_len == 0) throw ContractError("minibatch sequence length must be positive");
  const auto n = batch.batch_size * batch.seq_len;
  if (batch.tokens.size() != n || batch.targets.size() != n) {
    throw DimensionError("minibatch token/target arrays must hold N*T entries");
  }
  for (auto id : batch.tokens) {
    if (id < 0 || static_cast<std::uint64_t>(id) >= vocab) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
  for (auto id : batch.targets) {
    if (id != kIgnoreTarget && (id < 0 || static_cast<std::uint64_t>(id) >= vocab)) {
      throw IndexError("target id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
}

// --- ParameterRegistry -----------------------------------------------------------

Tensor& ParameterRegistry::add(std::string name, Tensor tensor) {
  if (contains(name)) throw ContractError("parameter '" + name + "' registered twice");
  entries_.push_back({std::move(name), std::move(tensor)});
  return entries_.back().tensor;
}

const Tensor& ParameterRegistry::at(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw IndexError("no parameter named '" + std::string(name) + "'");
}

bool ParameterRegistry::contains(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

std::size_t ParameterRegistry::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParameterRegistry::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

// --- ActivationCodes -----------------------------------------------------------------

void ActivationCodes::append(const Tensor& values, double threshold) {
  const auto inputs = rows_.size();
  if (inputs == 0 || values.numel() % inputs != 0) {
    throw DimensionError("activation codes: tensor does not split evenly over inputs");
  }
  const auto per = values.numel() / inputs;
  const auto v = values.values();
  for (std::size_t n = 0; n < inputs; ++n) {
    auto& row = rows_[n];
    row.resize((bits_ + per + 63) / 64, 0);
    for (std::size_t i = 0; i < per; ++i) {
      if (v[n * per + i] > threshold) {
        const auto pos = bits_ + i;
        row[pos / 64] |= std::uint64_t{1} << (pos % 64);
      }
    }
  }
  bits_ += per;
}

bool ActivationCodes::bit(std::size_t input, std::size_t index) const {
  if (input >= rows_.size() || index >= bits_) throw IndexError("activation code index out of range");
  return (rows_[input][index / 64] >> (index % 64)) & 1u;
}

std::size_t ActivationCodes::hamming(std::size_t i, std::size_t j) const {
  if (i >= rows_.size() || j >= rows_.size()) throw IndexError("activation code input out of range");
  std::size_t d = 0;
  for (std::size_t w = 0; w < rows_[i].size(); ++w) d += std::popcount(rows_[i][w] ^ rows_[j][w]);
  return d;
}

// --- bases ----------------------------------------------------------------------------

Tensor dft_basis(std::size_t length) {
  std::vector<double> b(length * length);
  const double norm = 1.0 / std::sqrt(static_cast<double>(length));
  for (std::size_t k = 0; k < length; ++k) {
    for (std::size_t s = 0; s < length; ++s) {
      // Reduce k*s mod T first so the angle stays small and exact for k*s = 0.
      const auto phase = (k * s) % length;
      b[k * length + s] = norm * std::cos(2.0 * std::numbers::pi * static_cast<double>(phase) / static_cast<double>(length));
    }
  }
  return Tensor::from({length, length}, std::move(b));
}

Tensor dct_basis(std::size_t length) {
  std::vector<double> b(length * length);
  const double len = static_cast<double>(length);
  for (std::size_t k = 0; k < length; ++k) {
    const double norm = k == 0 ? std::sqrt(1.0 / len) : std::sqrt(2.0 / len);
    for (std::size_t s = 0; s < length; ++s) {
      b[k * length + s] = norm * std::cos(std::numbers::pi * (static_cast<double>(s) + 0.5) * static_cast<double>(k) / len);
    }
  }
  return Tensor::from({length, length}, std::move(b));
}

// --- RNN -----------------------------------------------------------------------------------

RnnNetwork::RnnNetwork(RnnCellGenome genome, RnnDims dims, Rng& rng) : genome_(std::move(genome)), dims_(dims) {
  const auto& cell = this->cell();
  validate(cell);
  if (dims_.vocab == 0 || dims_.embed_dim == 0 || dims_.hidden_dim == 0) throw ContractError("rnn dims must be positive");
  order_ = topological_order(cell);
  const double bound = fan_in_bound(dims_.hidden_dim);
  const auto h = dims_.hidden_dim;
  parameters_.add("embedding", uniform({dims_.vocab, dims_.embed_dim}, bound, rng));
  for (std::size_t layer = 0; layer < kRnnStackDepth; ++layer) {
    const auto in_width = layer == 0 ? dims_.embed_dim : h;
    for (const auto& id : order_) {
      const auto& node = *std::find_if(cell.nodes.begin(), cell.nodes.end(), [&](auto& n) { return n.id == id; });
      if (node.op != CellOp::kLinear) continue;
      for (const auto& src : predecessors(cell, id)) {
        parameters_.add(node_weight_name(layer, id, src), uniform({src == cell.x_input ? in_width : h, h}, bound, rng));
      }
      parameters_.add("cell" + std::to_string(layer) + "." + id + ".bias", uniform({h}, bound, rng));
    }
  }
  parameters_.add("output.weight", uniform({h, dims_.vocab}, bound, rng));
  parameters_.add("output.bias", uniform({dims_.vocab}, bound, rng));
}

Tensor RnnNetwork::embed(const Minibatch& batch) const {
  validate(batch, dims_.vocab);
  Tape scratch;
  auto table = parameters_.at("embedding").clone();
  table.set_requires_grad(false);
  return gather_rows(scratch, table, batch.tokens, {batch.batch_size, batch.seq_len});
}

ForwardResult RnnNetwork::forward(Tape& tape, const Minibatch& batch, const ForwardOptions& options) {
  validate(batch, dims_.vocab);
  const auto& cell = this->cell();
  const auto n = batch.batch_size, steps = batch.seq_len, h = dims_.hidden_dim;
  ForwardResult out;
  if (options.input_embeddings) {
    out.inputs = *options.input_embeddings;
    if (out.inputs.shape() != Shape{n, steps, dims_.embed_dim}) {
      throw DimensionError("input embeddings must be " + shape_string({n, steps, dims_.embed_dim}));
    }
  } else {
    out.inputs = gather_rows(tape, parameters_.at("embedding"), batch.tokens, {n, steps});
  }
  out.activation_codes = ActivationCodes(n);

  std::unordered_map<std::string, CellOp> ops;
  for (const auto& node : cell.nodes) ops[node.id] = node.op;

  std::vector<Tensor> hidden(kRnnStackDepth, Tensor::zeros({n, h}));
  std::vector<Tensor> memory(kRnnStackDepth, Tensor::zeros({n, h}));
  std::vector<Tensor> top;
  top.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor x = select(tape, out.inputs, 1, t);
    for (std::size_t layer = 0; layer < kRnnStackDepth; ++layer) {
      std::unordered_map<std::string, Tensor> value{{cell.x_input, x}, {cell.h_input, hidden[layer]}};
      if (cell.c_input) value[*cell.c_input] = memory[layer];
      for (const auto& id : order_) {
        const auto sources = predecessors(cell, id);
        Tensor y;
        switch (ops[id]) {
          case CellOp::kLinear: {
            for (const auto& src : sources) {
              auto term = matmul(tape, value.at(src), parameters_.at(node_weight_name(layer, id, src)));
              y = y.defined() ? add(tape, y, term) : term;
            }
            y = add_bias(tape, y, parameters_.at("cell" + std::to_string(layer) + "." + id + ".bias"));
            break;
          }
          case CellOp::kSum:
          case CellOp::kProduct:
            y = value.at(sources[0]);
            for (std::size_t i = 1; i < sources.size(); ++i) {
              y = ops[id] == CellOp::kSum ? add(tape, y, value.at(sources[i])) : mul(tape, y, value.at(sources[i]));
            }
            break;
          case CellOp::kTanh:
            y = tanh(tape, value.at(sources[0]));
            out.activation_codes.append(y, 0.0);
            break;
          case CellOp::kSigmoid:
            y = sigmoid(tape, value.at(sources[0]));
            out.activation_codes.append(y, 0.5);
            break;
        }
        check_finite(y, "cell " + std::to_string(layer) + " node '" + id + "' step " + std::to_string(t));
        value[id] = y;
      }
      hidden[layer] = value.at(cell.h_output);
      if (cell.c_output) memory[layer] = value.at(*cell.c_output);
      x = hidden[layer];
    }
    top.push_back(x);
  }
  out.hidden_states = hidden;

  // Rows ordered n * T + t to line up with the row-major targets.
  auto states = reshape(tape, concat_last(tape, top), {n * steps, h});
  std::vector<std::int64_t> rows, targets;
  for (std::size_t i = 0; i < batch.targets.size(); ++i) {
    if (batch.targets[i] == kIgnoreTarget) continue;
    rows.push_back(static_cast<std::int64_t>(i));
    targets.push_back(batch.targets[i]);
  }
  if (targets.empty()) throw ContractError("rnn minibatch has no targets");
  if (rows.size() != n * steps) states = gather_rows(tape, states, rows);
  auto logits = linear(tape, states, parameters_.at("output.weight"), parameters_.at("output.bias"));
  check_finite(logits, "output projection");
  out.loss = cross_entropy(tape, logits, targets);
  return out;
}

// --- Transformer -------------------------------------------------------------------------

namespace {

std::string layer_prefix(std::size_t layer) { return "layer" + std::to_string(layer) + "."; }
std::string head_prefix(std::size_t layer, std::size_t head) {
  return layer_prefix(layer) + "head" + std::to_string(head) + ".";
}

}  // namespace

TransformerNetwork::TransformerNetwork(TransformerGenome genome, TransformerDims dims, Rng& rng)
    : genome_(std::move(genome)), dims_(dims) {
  const auto& arch = architecture();
  validate(arch);
  if (dims_.vocab == 0 || dims_.max_seq_len == 0) throw ContractError("transformer dims must be positive");
  const auto h = arch.hidden_dim;
  const double emb_bound = fan_in_bound(h);
  auto ones = [](std::size_t c) { return Tensor::filled({c}, 1.0, true); };
  auto zeros = [](std::size_t c) { return Tensor::zeros({c}, true); };
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    parameters_.add(name + ".weight", uniform({in, out}, fan_in_bound(in), rng));
    parameters_.add(name + ".bias", uniform({out}, fan_in_bound(in), rng));
  };

  parameters_.add("token_embedding", uniform({dims_.vocab, h}, emb_bound, rng));
  parameters_.add("position_embedding", uniform({dims_.max_seq_len, h}, emb_bound, rng));
  parameters_.add("embedding_norm.gain", ones(h));
  parameters_.add("embedding_norm.bias", zeros(h));
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const auto& layer = arch.layers[l];
    const auto head_dim = h / layer.num_heads;
    for (std::size_t head = 0; head < layer.num_heads; ++head) {
      const auto p = head_prefix(l, head);
      if (is_self_attention(layer.op)) {
        parameters_.add(p + "wq", uniform({h, head_dim}, fan_in_bound(h), rng));
        parameters_.add(p + "wk", uniform({h, head_dim}, fan_in_bound(h), rng));
        parameters_.add(p + "wv", uniform({h, head_dim}, fan_in_bound(h), rng));
        if (layer.op == AttentionOp::kMultiplicative) {
          parameters_.add(p + "wscore", uniform({head_dim, head_dim}, fan_in_bound(head_dim), rng));
        }
      } else if (is_dynamic_conv(layer.op)) {
        parameters_.add(p + "wv", uniform({h, head_dim}, fan_in_bound(h), rng));
        dense(p + "kernel", h, conv_kernel_size(layer.op));
      }
    }
    dense(layer_prefix(l) + "attn_out", h, h);
    parameters_.add(layer_prefix(l) + "attn_norm.gain", ones(h));
    parameters_.add(layer_prefix(l) + "attn_norm.bias", zeros(h));
    for (std::size_t s = 0; s < layer.ff_stacks; ++s) {
      const auto p = layer_prefix(l) + "ff" + std::to_string(s) + ".";
      dense(p + "in", h, layer.ff_dim);
      dense(p + "out", layer.ff_dim, h);
      parameters_.add(p + "norm.gain", ones(h));
      parameters_.add(p + "norm.bias", zeros(h));
    }
  }
  dense("mlm", h, dims_.vocab);
}

std::size_t TransformerNetwork::head_count() const {
  std::size_t n = 0;
  for (const auto& l : architecture().layers) n += l.num_heads;
  return n;
}

Tensor TransformerNetwork::embed(const Minibatch& batch) const {
  validate(batch, dims_.vocab);
  Tape scratch;
  auto table = parameters_.at("token_embedding").clone();
  table.set_requires_grad(false);
  return gather_rows(scratch, table, batch.tokens, {batch.batch_size, batch.seq_len});
}

ForwardResult TransformerNetwork::forward(Tape& tape, const Minibatch& batch, const ForwardOptions& options) {
  validate(batch, dims_.vocab);
  const auto& arch = architecture();
  const auto n = batch.batch_size, steps = batch.seq_len, h = arch.hidden_dim;
  if (steps > dims_.max_seq_len) {
    throw ContractError("sequence length " + std::to_string(steps) + " exceeds positional table of " +
                        std::to_string(dims_.max_seq_len));
  }
  std::vector<std::int64_t> masked_rows, masked_targets;
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t t = 0; t < steps; ++t) {
      const auto target = batch.targets[i * steps + t];
      if (target == kIgnoreTarget) continue;
      any = true;
      masked_rows.push_back(static_cast<std::int64_t>(i * steps + t));
      masked_targets.push_back(target);
    }
    if (!any) throw ContractError("sequence " + std::to_string(i) + " has no masked target position");
  }
  if (!options.head_output_scale.empty() && options.head_output_scale.size() != head_count()) {
    throw DimensionError("head_output_scale needs one entry per head");
  }

  ForwardResult out;
  out.activation_codes = ActivationCodes(n);
  if (options.input_embeddings) {
    out.inputs = *options.input_embeddings;
    if (out.inputs.shape() != Shape{n, steps, h}) {
      throw DimensionError("input embeddings must be " + shape_string({n, steps, h}));
    }
  } else {
    out.inputs = gather_rows(tape, parameters_.at("token_embedding"), batch.tokens, {n, steps});
  }
  std::vector<std::int64_t> positions(n * steps);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int64_t>(i % steps);
  auto x = add(tape, out.inputs, gather_rows(tape, parameters_.at("position_embedding"), positions, {n, steps}));
  x = layer_norm(tape, x, parameters_.at("embedding_norm.gain"), parameters_.at("embedding_norm.bias"));

  std::size_t capture_index = 0;
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const auto& layer = arch.layers[l];
    const auto head_dim = h / layer.num_heads;
    std::optional<Tensor> basis;
    if (layer.op == AttentionOp::kDft) basis = dft_basis(steps);
    if (layer.op == AttentionOp::kDct) basis = dct_basis(steps);

    std::vector<Tensor> head_outputs;
    for (std::size_t head = 0; head < layer.num_heads; ++head) {
      const auto p = head_prefix(l, head);
      HeadCapture cap;
      cap.layer = l;
      cap.head = head;
      cap.op = layer.op;
      Tensor att;
      if (is_self_attention(layer.op)) {
        const auto& wq = parameters_.at(p + "wq");
        const auto& wk = parameters_.at(p + "wk");
        const auto& wv = parameters_.at(p + "wv");
        auto q = matmul(tape, x, wq);
        auto k = matmul(tape, x, wk);
        auto v = matmul(tape, x, wv);
        cap.weights = {wq, wk, wv};
        Tensor scores;
        if (layer.op == AttentionOp::kMultiplicative) {
          const auto& ws = parameters_.at(p + "wscore");
          cap.weights.push_back(ws);
          scores = batched_matmul(tape, matmul(tape, q, ws), k, true);
        } else {
          scores = scale(tape, batched_matmul(tape, q, k, true), 1.0 / std::sqrt(static_cast<double>(head_dim)));
        }
        auto probs = softmax(tape, scores, 2);
        cap.softmax = probs;
        att = batched_matmul(tape, probs, v);
      } else if (basis) {
        cap.weights = {*basis};
        att = mix_sequence(tape, *basis, slice_last(tape, x, head * head_dim, (head + 1) * head_dim));
      } else {
        const auto& wv = parameters_.at(p + "wv");
        const auto& wk = parameters_.at(p + "kernel.weight");
        cap.weights = {wv, wk};
        auto kernels = softmax(tape, linear(tape, x, wk, parameters_.at(p + "kernel.bias")), 2);
        att = dynamic_conv(tape, kernels, matmul(tape, x, wv));
      }
      if (!options.head_output_scale.empty()) att = scale(tape, att, options.head_output_scale[capture_index]);
      check_finite(att, "layer " + std::to_string(l) + " head " + std::to_string(head));
      cap.output = att;
      head_outputs.push_back(att);
      out.heads.push_back(std::move(cap));
      ++capture_index;
    }
    const auto lp = layer_prefix(l);
    auto mixed = linear(tape, concat_last(tape, head_outputs), parameters_.at(lp + "attn_out.weight"),
                        parameters_.at(lp + "attn_out.bias"));
    x = layer_norm(tape, add(tape, x, mixed), parameters_.at(lp + "attn_norm.gain"),
                   parameters_.at(lp + "attn_norm.bias"));
    for (std::size_t s = 0; s < layer.ff_stacks; ++s) {
      const auto p = lp + "ff" + std::to_string(s) + ".";
      auto inner = gelu(tape, linear(tape, x, parameters_.at(p + "in.weight"), parameters_.at(p + "in.bias")));
      out.activation_codes.append(inner, 0.0);
      auto ff = linear(tape, inner, parameters_.at(p + "out.weight"), parameters_.at(p + "out.bias"));
      x = layer_norm(tape, add(tape, x, ff), parameters_.at(p + "norm.gain"), parameters_.at(p + "norm.bias"));
    }
    check_finite(x, "layer " + std::to_string(l) + " output");
    out.hidden_states.push_back(x);
  }

  auto rows = gather_rows(tape, reshape(tape, x, {n * steps, h}), masked_rows);
  auto logits = linear(tape, rows, parameters_.at("mlm.weight"), parameters_.at("mlm.bias"));
  check_finite(logits, "prediction head");
  out.loss = cross_entropy(tape, logits, masked_targets);
  return out;
}

// --- builders --------------------------------------------------------------------------------

std::unique_ptr<RnnNetwork> build_rnn(const RnnCellGenome& genome, const RnnDims& dims, Rng& rng) {
  return std::make_unique<RnnNetwork>(genome, dims, rng);
}

std::unique_ptr<TransformerNetwork> build_transformer(const TransformerGenome& genome, const TransformerDims& dims,
                                                      Rng& rng) {
  return std::make_unique<TransformerNetwork>(genome, dims, rng);
}

std::unique_ptr<Network> build_network(const Genome& genome, const ModelDims& dims, Rng& rng) {
  if (const auto* rnn = std::get_if<RnnCellGenome>(&genome)) return build_rnn(*rnn, dims.rnn, rng);
  return build_transformer(std::get<TransformerGenome>(genome), dims.transformer, rng);
}

}  // namespace tfnas
