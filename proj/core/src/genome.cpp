#include "tfnas/genome.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace {

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool valid_id(std::string_view id) {
  if (id.empty()) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
  });
}

template <typename T>
std::optional<T> parse_number(std::string_view token) {
  T value{};
  const auto* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

template <std::size_t N>
bool member(std::size_t value, const std::size_t (&set)[N]) {
  return std::find(std::begin(set), std::end(set), value) != std::end(set);
}

}  // namespace

// ---------------------------------------------------------------------------
// RNN cells
// ---------------------------------------------------------------------------

std::string_view to_string(CellOp op) {
  switch (op) {
    case CellOp::kLinear: return "linear";
    case CellOp::kSum: return "sum";
    case CellOp::kProduct: return "product";
    case CellOp::kTanh: return "tanh";
    case CellOp::kSigmoid: return "sigmoid";
  }
  return "?";
}

std::optional<CellOp> parse_cell_op(std::string_view token) {
  for (auto op : {CellOp::kLinear, CellOp::kSum, CellOp::kProduct, CellOp::kTanh, CellOp::kSigmoid}) {
    if (token == to_string(op)) return op;
  }
  return std::nullopt;
}

std::vector<std::string> predecessors(const RnnCellGenome& genome, std::string_view node_id) {
  std::vector<std::string> out;
  for (const auto& e : genome.edges) {
    if (e.dst == node_id) out.push_back(e.src);
  }
  return out;
}

void validate(const RnnCellGenome& g) {
  auto fail = [](const std::string& msg) { throw ValidationError("rnn cell: " + msg); };
  if (g.nodes.empty()) fail("no operation nodes");

  std::set<std::string> inputs{g.x_input, g.h_input};
  if (g.c_input) inputs.insert(*g.c_input);
  if (inputs.size() != (g.c_input ? 3u : 2u)) fail("input ids must be distinct");
  for (const auto& id : inputs) {
    if (!valid_id(id)) fail("invalid input id '" + id + "'");
  }

  std::unordered_map<std::string, CellOp> ops;
  for (const auto& n : g.nodes) {
    if (!valid_id(n.id)) fail("invalid node id '" + n.id + "'");
    if (inputs.count(n.id) || !ops.emplace(n.id, n.op).second) fail("duplicate id '" + n.id + "'");
  }

  std::unordered_map<std::string, std::size_t> in_degree;
  std::set<std::pair<std::string, std::string>> seen;
  bool x_used = false;
  for (const auto& e : g.edges) {
    if (!ops.count(e.src) && !inputs.count(e.src)) fail("edge from unknown id '" + e.src + "'");
    if (!ops.count(e.dst)) {
      fail(inputs.count(e.dst) ? "edge into input '" + e.dst + "'" : "edge to unknown id '" + e.dst + "'");
    }
    if (!seen.emplace(e.src, e.dst).second) fail("duplicate edge " + e.src + ">" + e.dst);
    if (e.src == g.x_input) {
      x_used = true;
      if (ops.at(e.dst) != CellOp::kLinear) fail("input '" + e.src + "' may only feed linear nodes");
    }
    ++in_degree[e.dst];
  }
  if (!x_used) fail("input '" + g.x_input + "' is unused");

  for (const auto& n : g.nodes) {
    const auto deg = in_degree[n.id];
    switch (n.op) {
      case CellOp::kLinear:
        if (deg < 1) fail("linear node '" + n.id + "' has no inputs");
        break;
      case CellOp::kSum:
      case CellOp::kProduct:
        if (deg < 2) fail("elementwise node '" + n.id + "' needs at least 2 inputs");
        break;
      case CellOp::kTanh:
      case CellOp::kSigmoid:
        if (deg != 1) fail("activation node '" + n.id + "' needs exactly 1 input");
        break;
    }
  }

  // Kahn's algorithm over operation nodes: detects cycles.
  std::unordered_map<std::string, std::size_t> pending;
  for (const auto& n : g.nodes) pending[n.id] = 0;
  for (const auto& e : g.edges) {
    if (ops.count(e.src)) ++pending[e.dst];
  }
  std::vector<std::string> ready;
  for (const auto& n : g.nodes) {
    if (pending[n.id] == 0) ready.push_back(n.id);
  }
  std::set<std::string> reached(inputs.begin(), inputs.end());
  std::size_t visited = 0;
  while (!ready.empty()) {
    auto id = ready.back();
    ready.pop_back();
    ++visited;
    for (const auto& e : g.edges) {
      if (e.src == id && --pending[e.dst] == 0) ready.push_back(e.dst);
    }
  }
  if (visited != g.nodes.size()) fail("edge graph has a cycle");

  // Forward reachability from the inputs.
  bool grew = true;
  while (grew) {
    grew = false;
    for (const auto& e : g.edges) {
      if (reached.count(e.src) && reached.insert(e.dst).second) grew = true;
    }
  }
  for (const auto& n : g.nodes) {
    if (!reached.count(n.id)) fail("node '" + n.id + "' is unreachable from the inputs");
  }

  if (!ops.count(g.h_output)) fail("hidden output '" + g.h_output + "' is not an operation node");
  if (g.c_input.has_value() != g.c_output.has_value()) fail("memory input and memory output must come together");
  if (g.c_output) {
    if (!ops.count(*g.c_output)) fail("memory output '" + *g.c_output + "' is not an operation node");
    if (*g.c_output == g.h_output) fail("memory output must differ from hidden output");
  }
}

std::vector<std::string> topological_order(const RnnCellGenome& g) {
  std::unordered_map<std::string, std::size_t> pending;
  std::set<std::string> node_ids;
  for (const auto& n : g.nodes) {
    pending[n.id] = 0;
    node_ids.insert(n.id);
  }
  for (const auto& e : g.edges) {
    if (node_ids.count(e.src)) ++pending[e.dst];
  }
  // Stable: repeatedly take the earliest listed ready node.
  std::vector<std::string> order;
  std::set<std::string> done;
  while (order.size() < g.nodes.size()) {
    bool progressed = false;
    for (const auto& n : g.nodes) {
      if (done.count(n.id) || pending[n.id] != 0) continue;
      order.push_back(n.id);
      done.insert(n.id);
      for (const auto& e : g.edges) {
        if (e.src == n.id) --pending[e.dst];
      }
      progressed = true;
      break;
    }
    if (!progressed) throw ValidationError("rnn cell: edge graph has a cycle");
  }
  return order;
}

RnnCellGenome vanilla_rnn_cell() {
  RnnCellGenome g;
  g.nodes = {{"n0", CellOp::kLinear}, {"n1", CellOp::kTanh}};
  g.edges = {{"x", "n0"}, {"h", "n0"}, {"n0", "n1"}};
  g.h_output = "n1";
  return g;
}

RnnCellGenome sample_rnn(Rng& rng, std::size_t max_nodes) {
  if (max_nodes < 3) throw ContractError("sample_rnn: max_nodes must be at least 3");
  if (max_nodes == 3) return vanilla_rnn_cell();

  constexpr int kRetries = 100;
  for (int attempt = 0; attempt < kRetries; ++attempt) {
    RnnCellGenome g;
    const bool with_memory = std::uniform_int_distribution<int>(0, 3)(rng) == 0;
    if (with_memory) g.c_input = "c";
    const auto count = std::uniform_int_distribution<std::size_t>(3, max_nodes)(rng);

    // Candidates a later node may read from. x only feeds linear nodes.
    std::vector<std::string> hidden_sources{g.h_input};
    if (with_memory) hidden_sources.push_back(*g.c_input);

    g.nodes.push_back({"n0", CellOp::kLinear});
    g.edges.push_back({g.x_input, "n0"});
    g.edges.push_back({g.h_input, "n0"});
    hidden_sources.push_back("n0");

    auto pick_distinct = [&](std::size_t k) {
      std::vector<std::string> pool = hidden_sources;
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(std::min(k, pool.size()));
      return pool;
    };

    for (std::size_t i = 1; i < count; ++i) {
      const std::string id = "n" + std::to_string(i);
      const auto op = static_cast<CellOp>(std::uniform_int_distribution<int>(0, 4)(rng));
      std::vector<std::string> sources;
      switch (op) {
        case CellOp::kLinear: {
          sources = pick_distinct(std::uniform_int_distribution<std::size_t>(1, 2)(rng));
          if (std::uniform_int_distribution<int>(0, 3)(rng) == 0) sources.push_back(g.x_input);
          break;
        }
        case CellOp::kSum:
        case CellOp::kProduct:
          sources = pick_distinct(std::uniform_int_distribution<std::size_t>(2, 3)(rng));
          break;
        case CellOp::kTanh:
        case CellOp::kSigmoid:
          // Prefer the newest node so activations chain onto recent results.
          sources = {std::uniform_int_distribution<int>(0, 1)(rng) == 0 ? hidden_sources.back()
                                                                        : pick_distinct(1).front()};
          break;
      }
      g.nodes.push_back({id, op});
      for (auto& s : sources) g.edges.push_back({s, id});
      hidden_sources.push_back(id);
    }
    g.h_output = g.nodes.back().id;
    if (with_memory) {
      const auto idx = std::uniform_int_distribution<std::size_t>(0, g.nodes.size() - 2)(rng);
      g.c_output = g.nodes[idx].id;
    }
    try {
      validate(g);
      return g;
    } catch (const ValidationError&) {
      continue;
    }
  }
  throw GenerationError("sample_rnn: no valid cell after " + std::to_string(kRetries) + " attempts");
}

// ---------------------------------------------------------------------------
// Transformers
// ---------------------------------------------------------------------------

std::string_view to_string(AttentionOp op) {
  switch (op) {
    case AttentionOp::kScaledDotProduct: return "sdp";
    case AttentionOp::kMultiplicative: return "mult";
    case AttentionOp::kDft: return "dft";
    case AttentionOp::kDct: return "dct";
    case AttentionOp::kConv5: return "conv5";
    case AttentionOp::kConv9: return "conv9";
  }
  return "?";
}

std::optional<AttentionOp> parse_attention_op(std::string_view token) {
  for (auto op : kAllAttentionOps) {
    if (token == to_string(op)) return op;
  }
  return std::nullopt;
}

bool is_self_attention(AttentionOp op) {
  return op == AttentionOp::kScaledDotProduct || op == AttentionOp::kMultiplicative;
}
bool is_linear_transform(AttentionOp op) { return op == AttentionOp::kDft || op == AttentionOp::kDct; }
bool is_dynamic_conv(AttentionOp op) { return op == AttentionOp::kConv5 || op == AttentionOp::kConv9; }
std::size_t conv_kernel_size(AttentionOp op) {
  return op == AttentionOp::kConv5 ? 5 : op == AttentionOp::kConv9 ? 9 : 0;
}

void validate(const TransformerGenome& g) {
  auto fail = [](const std::string& msg) { throw ValidationError("transformer: " + msg); };
  if (g.layers.empty()) fail("empty layer list");
  if (!member(g.hidden_dim, kHiddenDims)) fail("hidden_dim " + std::to_string(g.hidden_dim) + " not in {128, 256}");
  if (!member(g.num_layers, kLayerCounts)) fail("num_layers " + std::to_string(g.num_layers) + " not in {2, 4}");
  if (g.layers.size() != g.num_layers) {
    fail(std::to_string(g.layers.size()) + " layers listed, num_layers is " + std::to_string(g.num_layers));
  }
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    const auto where = "layer " + std::to_string(i) + ": ";
    if (!member(l.num_heads, kHeadCounts)) fail(where + "num_heads not in {2, 4}");
    if (!member(l.ff_dim, kFeedForwardDims)) fail(where + "ff_dim not in {512, 1024}");
    if (!member(l.ff_stacks, kFeedForwardStacks)) fail(where + "ff_stacks not in {1, 3}");
    if (g.hidden_dim % l.num_heads != 0) fail(where + "hidden_dim not divisible by num_heads");
    if (std::find(std::begin(kAllAttentionOps), std::end(kAllAttentionOps), l.op) == std::end(kAllAttentionOps)) {
      fail(where + "unknown attention operator");
    }
  }
}

std::uint64_t layer_configuration_count() {
  return std::size(kAllAttentionOps) * std::size(kHeadCounts) * std::size(kFeedForwardDims) *
         std::size(kFeedForwardStacks);
}

namespace {

std::uint64_t ipow(std::uint64_t base, std::size_t exp) {
  std::uint64_t out = 1;
  while (exp--) out *= base;
  return out;
}

EncoderLayer layer_from_index(std::uint64_t index) {
  EncoderLayer l;
  l.ff_stacks = kFeedForwardStacks[index % 2];
  index /= 2;
  l.ff_dim = kFeedForwardDims[index % 2];
  index /= 2;
  l.num_heads = kHeadCounts[index % 2];
  index /= 2;
  l.op = kAllAttentionOps[index];
  return l;
}

std::uint64_t layer_index(const EncoderLayer& l) {
  auto pos = [](auto& set, auto v) {
    return static_cast<std::uint64_t>(std::find(std::begin(set), std::end(set), v) - std::begin(set));
  };
  return ((pos(kAllAttentionOps, l.op) * 2 + pos(kHeadCounts, l.num_heads)) * 2 + pos(kFeedForwardDims, l.ff_dim)) *
             2 +
         pos(kFeedForwardStacks, l.ff_stacks);
}

}  // namespace

std::uint64_t count_search_space() {
  std::uint64_t per_hidden = 0;
  for (auto layers : kLayerCounts) per_hidden += ipow(layer_configuration_count(), layers);
  return std::size(kHiddenDims) * per_hidden;
}

TransformerGenome transformer_from_index(std::uint64_t index) {
  if (index >= count_search_space()) throw IndexError("transformer index out of range");
  const auto per_layer = layer_configuration_count();
  const auto per_hidden = count_search_space() / std::size(kHiddenDims);
  TransformerGenome g;
  g.hidden_dim = kHiddenDims[index / per_hidden];
  index %= per_hidden;
  for (auto layers : kLayerCounts) {
    const auto block = ipow(per_layer, layers);
    if (index < block) {
      g.num_layers = layers;
      break;
    }
    index -= block;
  }
  for (std::size_t i = 0; i < g.num_layers; ++i) {
    g.layers.push_back(layer_from_index(index % per_layer));
    index /= per_layer;
  }
  return g;
}

std::uint64_t transformer_index(const TransformerGenome& g) {
  validate(g);
  const auto per_layer = layer_configuration_count();
  const auto per_hidden = count_search_space() / std::size(kHiddenDims);
  std::uint64_t index = g.hidden_dim == kHiddenDims[0] ? 0 : per_hidden;
  for (auto layers : kLayerCounts) {
    if (layers == g.num_layers) break;
    index += ipow(per_layer, layers);
  }
  std::uint64_t within = 0;
  for (std::size_t i = g.layers.size(); i-- > 0;) within = within * per_layer + layer_index(g.layers[i]);
  return index + within;
}

TransformerGenome sample_transformer(Rng& rng) {
  return transformer_from_index(std::uniform_int_distribution<std::uint64_t>(0, count_search_space() - 1)(rng));
}

// ---------------------------------------------------------------------------
// Either kind
// ---------------------------------------------------------------------------

std::string_view to_string(SearchSpace space) { return space == SearchSpace::kRnn ? "rnn" : "transformer"; }

std::optional<SearchSpace> parse_search_space(std::string_view token) {
  if (token == "rnn") return SearchSpace::kRnn;
  if (token == "transformer") return SearchSpace::kTransformer;
  return std::nullopt;
}

SearchSpace space_of(const Genome& genome) {
  return std::holds_alternative<RnnCellGenome>(genome) ? SearchSpace::kRnn : SearchSpace::kTransformer;
}

void validate(const Genome& genome) {
  std::visit([](const auto& g) { validate(g); }, genome);
}

std::size_t linear_param_count(std::size_t in, std::size_t out) { return in * out + out; }

std::size_t param_count(const RnnCellGenome& genome, const RnnDims& dims) {
  validate(genome);
  const auto h = dims.hidden_dim;
  std::size_t total = dims.vocab * dims.embed_dim;
  for (std::size_t layer = 0; layer < 3; ++layer) {
    const auto in_width = layer == 0 ? dims.embed_dim : h;
    for (const auto& n : genome.nodes) {
      if (n.op != CellOp::kLinear) continue;
      for (const auto& src : predecessors(genome, n.id)) total += (src == genome.x_input ? in_width : h) * h;
      total += h;
    }
  }
  return total + linear_param_count(h, dims.vocab);
}

std::size_t param_count(const TransformerGenome& genome, const TransformerDims& dims) {
  validate(genome);
  const auto h = genome.hidden_dim;
  std::size_t total = dims.vocab * h + dims.max_seq_len * h + 2 * h;
  for (const auto& layer : genome.layers) {
    const auto heads = layer.num_heads;
    const auto head_dim = h / heads;
    switch (layer.op) {
      case AttentionOp::kScaledDotProduct: total += heads * 3 * h * head_dim; break;
      case AttentionOp::kMultiplicative: total += heads * (3 * h * head_dim + head_dim * head_dim); break;
      case AttentionOp::kDft:
      case AttentionOp::kDct: break;
      case AttentionOp::kConv5:
      case AttentionOp::kConv9: {
        const auto k = conv_kernel_size(layer.op);
        total += heads * (h * head_dim + linear_param_count(h, k));
        break;
      }
    }
    total += linear_param_count(h, h) + 2 * h;
    total += layer.ff_stacks * (linear_param_count(h, layer.ff_dim) + linear_param_count(layer.ff_dim, h) + 2 * h);
  }
  return total + linear_param_count(h, dims.vocab);
}

std::size_t param_count(const Genome& genome, const ModelDims& dims) {
  if (const auto* rnn = std::get_if<RnnCellGenome>(&genome)) return param_count(*rnn, dims.rnn);
  return param_count(std::get<TransformerGenome>(genome), dims.transformer);
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

std::string serialize(const Genome& genome) {
  std::ostringstream out;
  out << "version=" << kGenomeFormatVersion;
  if (const auto* t = std::get_if<TransformerGenome>(&genome)) {
    out << " kind=transformer hidden_dim=" << t->hidden_dim << " num_layers=" << t->num_layers << " layers=";
    for (std::size_t i = 0; i < t->layers.size(); ++i) {
      const auto& l = t->layers[i];
      if (i) out << '|';
      out << to_string(l.op) << ':' << l.num_heads << ':' << l.ff_dim << ':' << l.ff_stacks;
    }
    return out.str();
  }
  const auto& r = std::get<RnnCellGenome>(genome);
  out << " kind=rnn inputs=" << r.x_input << ',' << r.h_input;
  if (r.c_input) out << ',' << *r.c_input;
  out << " outputs=" << r.h_output;
  if (r.c_output) out << ',' << *r.c_output;
  out << " nodes=";
  for (std::size_t i = 0; i < r.nodes.size(); ++i) {
    if (i) out << '|';
    out << r.nodes[i].id << ':' << to_string(r.nodes[i].op);
  }
  out << " edges=";
  for (std::size_t i = 0; i < r.edges.size(); ++i) {
    if (i) out << '|';
    out << r.edges[i].src << '>' << r.edges[i].dst;
  }
  return out.str();
}

Genome deserialize(std::string_view text, std::size_t line) {
  while (!text.empty() && (text.back() == '\r' || text.back() == '\n' || text.back() == ' ')) text.remove_suffix(1);
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  if (text.empty()) throw ParseError("empty genome record", line, "");

  std::map<std::string, std::string, std::less<>> fields;
  for (auto token : split(text, ' ')) {
    if (token.empty()) continue;
    const auto eq = token.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key=value", line, std::string(token));
    std::string key(token.substr(0, eq));
    if (!fields.emplace(key, std::string(token.substr(eq + 1))).second) {
      throw ParseError("duplicate field", line, key);
    }
  }
  auto field = [&](const char* key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw ParseError("missing field", line, key);
    return it->second;
  };
  auto count = [&](const char* key) {
    auto v = parse_number<std::size_t>(field(key));
    if (!v) throw ParseError("expected a non-negative integer, got '" + field(key) + "'", line, key);
    return *v;
  };

  const auto version = parse_number<int>(field("version"));
  if (!version || *version != kGenomeFormatVersion) {
    throw ParseError("unsupported version '" + field("version") + "'", line, "version");
  }
  const auto kind = parse_search_space(field("kind"));
  if (!kind) throw ParseError("unknown kind '" + field("kind") + "'", line, "kind");

  std::set<std::string> allowed{"version", "kind"};
  Genome genome;
  if (*kind == SearchSpace::kTransformer) {
    allowed.insert({"hidden_dim", "num_layers", "layers"});
    TransformerGenome t;
    t.hidden_dim = count("hidden_dim");
    t.num_layers = count("num_layers");
    const auto& layers = field("layers");
    if (!layers.empty()) {
      for (auto spec : split(layers, '|')) {
        const auto parts = split(spec, ':');
        if (parts.size() != 4) {
          throw ParseError("layer '" + std::string(spec) + "' must be op:heads:ff_dim:ff_stacks", line, "layers");
        }
        const auto op = parse_attention_op(parts[0]);
        if (!op) throw ParseError("unknown attention operator '" + std::string(parts[0]) + "'", line, "layers");
        EncoderLayer l;
        l.op = *op;
        const auto heads = parse_number<std::size_t>(parts[1]);
        const auto ff = parse_number<std::size_t>(parts[2]);
        const auto stacks = parse_number<std::size_t>(parts[3]);
        if (!heads || !ff || !stacks) throw ParseError("bad number in '" + std::string(spec) + "'", line, "layers");
        l.num_heads = *heads;
        l.ff_dim = *ff;
        l.ff_stacks = *stacks;
        t.layers.push_back(l);
      }
    }
    genome = std::move(t);
  } else {
    allowed.insert({"inputs", "outputs", "nodes", "edges"});
    RnnCellGenome r;
    const auto ins = split(field("inputs"), ',');
    if (ins.size() != 2 && ins.size() != 3) throw ParseError("inputs must be x,h or x,h,c", line, "inputs");
    r.x_input = std::string(ins[0]);
    r.h_input = std::string(ins[1]);
    if (ins.size() == 3) r.c_input = std::string(ins[2]);
    const auto outs = split(field("outputs"), ',');
    if (outs.size() != 1 && outs.size() != 2) throw ParseError("outputs must be h or h,c", line, "outputs");
    r.h_output = std::string(outs[0]);
    if (outs.size() == 2) r.c_output = std::string(outs[1]);
    if (!field("nodes").empty()) {
      for (auto spec : split(field("nodes"), '|')) {
        const auto colon = spec.find(':');
        if (colon == std::string_view::npos) throw ParseError("node '" + std::string(spec) + "' must be id:op", line, "nodes");
        const auto op = parse_cell_op(spec.substr(colon + 1));
        if (!op) throw ParseError("unknown cell operation '" + std::string(spec.substr(colon + 1)) + "'", line, "nodes");
        r.nodes.push_back({std::string(spec.substr(0, colon)), *op});
      }
    }
    if (!field("edges").empty()) {
      for (auto spec : split(field("edges"), '|')) {
        const auto gt = spec.find('>');
        if (gt == std::string_view::npos) throw ParseError("edge '" + std::string(spec) + "' must be src>dst", line, "edges");
        r.edges.push_back({std::string(spec.substr(0, gt)), std::string(spec.substr(gt + 1))});
      }
    }
    genome = std::move(r);
  }
  for (const auto& [key, _] : fields) {
    if (!allowed.count(key)) throw ParseError("unknown field", line, key);
  }
  validate(genome);
  return genome;
}

std::string genome_key(const Genome& genome) {
  std::uint64_t hash = 14695981039346656037ull;
  for (unsigned char c : serialize(genome)) {
    hash ^= c;
    hash *= 1099511628211ull;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, hash >>= 4) out[static_cast<std::size_t>(i)] = kHex[hash & 0xf];
  return out;
}

std::vector<BenchmarkRecord> parse_benchmark(std::string_view text) {
  std::vector<BenchmarkRecord> records;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const auto cols = split(line, '\t');
    if (cols.size() < 2) throw ParseError("expected genome<TAB>trained_score", line_no, "");
    BenchmarkRecord rec{deserialize(cols[0], line_no), 0.0, {}};
    std::string score(cols[1]);
    std::size_t used = 0;
    try {
      rec.trained_score = std::stod(score, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != score.size() || !std::isfinite(rec.trained_score)) {
      throw ParseError("trained score '" + score + "' is not a finite number", line_no, "trained_score");
    }
    for (std::size_t i = 2; i < cols.size(); ++i) {
      const auto eq = cols[i].find('=');
      if (eq == std::string_view::npos) throw ParseError("metadata must be key=value", line_no, std::string(cols[i]));
      rec.metadata[std::string(cols[i].substr(0, eq))] = std::string(cols[i].substr(eq + 1));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<BenchmarkRecord> load_benchmark(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open benchmark table " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_benchmark(buffer.str());
}

std::string format_benchmark(const std::vector<BenchmarkRecord>& records) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& r : records) {
    out << serialize(r.genome) << '\t' << r.trained_score;
    for (const auto& [k, v] : r.metadata) out << '\t' << k << '=' << v;
    out << '\n';
  }
  return out.str();
}

}  // namespace tfnas
