#include <gtest/gtest.h>

#include <set>
#include <string>
#include <vector>

#include "tfnas/errors.hpp"
#include "tfnas/genome.hpp"

namespace tfnas {
namespace {

// Every per-layer configuration, by nested loops over the value sets.
std::vector<EncoderLayer> enumerate_layers() {
  std::vector<EncoderLayer> out;
  for (AttentionOp op : kAllAttentionOps)
    for (std::size_t heads : kHeadCounts)
      for (std::size_t ff : kFeedForwardDims)
        for (std::size_t stacks : kFeedForwardStacks) out.push_back({op, heads, ff, stacks});
  return out;
}

TEST(Genome, LayerConfigurationCountByEnumeration) {
  auto layers = enumerate_layers();
  std::set<std::string> distinct;
  for (const auto& l : layers)
    distinct.insert(std::string(to_string(l.op)) + std::to_string(l.num_heads) + "/" + std::to_string(l.ff_dim) +
                    "/" + std::to_string(l.ff_stacks));
  EXPECT_EQ(distinct.size(), 48u);
  EXPECT_EQ(layer_configuration_count(), 48u);
}

TEST(Genome, TwoLayerSpaceByEnumeration) {
  auto layers = enumerate_layers();
  std::set<std::uint64_t> indices;
  std::size_t count = 0;
  for (std::size_t hidden : kHiddenDims)
    for (const auto& a : layers)
      for (const auto& b : layers) {
        TransformerGenome g{hidden, 2, {a, b}};
        ASSERT_NO_THROW(validate(g));
        const auto index = transformer_index(g);
        ASSERT_EQ(transformer_from_index(index), g);
        indices.insert(index);
        ++count;
      }
  EXPECT_EQ(count, 4608u);
  EXPECT_EQ(indices.size(), 4608u);
}

TEST(Genome, SearchSpaceCount) {
  // Symbolic enumeration: one factor of the per-layer grid per layer.
  const std::uint64_t per_layer = enumerate_layers().size();
  std::uint64_t total = 0;
  for (std::size_t hidden : kHiddenDims) {
    (void)hidden;
    for (std::size_t layers : kLayerCounts) {
      std::uint64_t n = 1;
      for (std::size_t i = 0; i < layers; ++i) n *= per_layer;
      total += n;
    }
  }
  EXPECT_EQ(total, 10621440u);
  EXPECT_EQ(count_search_space(), 10621440u);
}

TEST(Genome, IndexBijectionOnRandomIndices) {
  Rng rng(17);
  std::uniform_int_distribution<std::uint64_t> pick(0, count_search_space() - 1);
  for (int i = 0; i < 2000; ++i) {
    const auto index = pick(rng);
    auto g = transformer_from_index(index);
    ASSERT_NO_THROW(validate(g));
    EXPECT_EQ(transformer_index(g), index);
  }
  EXPECT_EQ(transformer_index(transformer_from_index(count_search_space() - 1)), count_search_space() - 1);
  EXPECT_THROW(transformer_from_index(count_search_space()), IndexError);
}

TEST(Genome, SampleTransformerMembershipAndDeterminism) {
  Rng a(0), b(0);
  for (int i = 0; i < 100; ++i) {
    auto g = sample_transformer(a);
    EXPECT_NO_THROW(validate(g));
    EXPECT_EQ(g, sample_transformer(b));
  }
}

TEST(Genome, HiddenDimFrequency) {
  Rng rng(2024);
  int small = 0;
  for (int i = 0; i < 10000; ++i) small += sample_transformer(rng).hidden_dim == 128;
  EXPECT_NEAR(small / 10000.0, 0.5, 0.02);
}

TEST(Genome, SampleRnnSweep) {
  Rng rng(0);
  auto first = sample_rnn(rng, 8);
  EXPECT_NO_THROW(validate(first));
  for (int i = 0; i < 1000; ++i) {
    auto g = sample_rnn(rng, 3 + i % 10);
    EXPECT_LE(g.nodes.size(), 3u + i % 10);
    EXPECT_NO_THROW(validate(g)) << serialize(g);
  }
  Rng again(0);
  EXPECT_EQ(sample_rnn(again, 8), first);
  EXPECT_THROW(sample_rnn(rng, 2), ContractError);
}

TEST(Genome, MinimalCellIsVanilla) {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_rnn(rng, 3), vanilla_rnn_cell());
  auto v = vanilla_rnn_cell();
  ASSERT_EQ(v.nodes.size(), 2u);
  EXPECT_EQ(v.nodes[0].op, CellOp::kLinear);
  EXPECT_EQ(v.nodes[1].op, CellOp::kTanh);
  EXPECT_EQ(predecessors(v, v.nodes[0].id), (std::vector<std::string>{"x", "h"}));
  EXPECT_EQ(v.h_output, v.nodes[1].id);
}

TEST(Genome, ValidationRejectsCorruptions) {
  const auto base = vanilla_rnn_cell();
  auto expect_invalid = [](RnnCellGenome g) { EXPECT_THROW(validate(g), ValidationError) << serialize(g); };

  auto cyclic = base;
  cyclic.nodes.push_back({"n2", CellOp::kSum});
  cyclic.edges.push_back({"n1", "n2"});
  cyclic.edges.push_back({"n2", "n0"});
  cyclic.edges.push_back({"h", "n2"});
  expect_invalid(cyclic);

  auto no_x = base;
  no_x.edges.erase(no_x.edges.begin());
  expect_invalid(no_x);

  auto x_into_tanh = base;
  x_into_tanh.edges.push_back({"x", "n1"});
  expect_invalid(x_into_tanh);

  auto dup_edge = base;
  dup_edge.edges.push_back(dup_edge.edges.front());
  expect_invalid(dup_edge);

  auto dangling = base;
  dangling.edges.push_back({"ghost", "n0"});
  expect_invalid(dangling);

  auto into_input = base;
  into_input.edges.push_back({"n1", "h"});
  expect_invalid(into_input);

  auto bad_output = base;
  bad_output.h_output = "x";
  expect_invalid(bad_output);

  auto lone_sum = base;
  lone_sum.nodes.push_back({"n2", CellOp::kSum});
  lone_sum.edges.push_back({"n1", "n2"});
  expect_invalid(lone_sum);

  auto memory_half = base;
  memory_half.c_input = "c";
  expect_invalid(memory_half);

  auto empty = base;
  empty.nodes.clear();
  expect_invalid(empty);

  TransformerGenome t{128, 2, {EncoderLayer{}, EncoderLayer{}}};
  EXPECT_NO_THROW(validate(t));
  auto no_layers = t;
  no_layers.layers.clear();
  EXPECT_THROW(validate(no_layers), ValidationError);
  auto mismatch = t;
  mismatch.num_layers = 4;
  EXPECT_THROW(validate(mismatch), ValidationError);
  auto bad_hidden = t;
  bad_hidden.hidden_dim = 192;
  EXPECT_THROW(validate(bad_hidden), ValidationError);
  auto bad_ff = t;
  bad_ff.layers[1].ff_dim = 768;
  EXPECT_THROW(validate(bad_ff), ValidationError);
  auto bad_heads = t;
  bad_heads.layers[0].num_heads = 3;
  EXPECT_THROW(validate(bad_heads), ValidationError);
}

TEST(Genome, RoundTrip) {
  Rng rng(77);
  for (int i = 0; i < 1000; ++i) {
    Genome g = i % 2 ? Genome(sample_transformer(rng)) : Genome(sample_rnn(rng, 3 + i % 9));
    const auto text = serialize(g);
    EXPECT_EQ(deserialize(text), g) << text;
    EXPECT_EQ(serialize(deserialize(text)), text);
  }
}

TEST(Genome, ParseErrors) {
  try {
    deserialize("version=1 kind=transformer hidden_dim=128 num_layers=2 layers=sdp:2:512:1|fourier:2:512:1", 7);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 7u);
    EXPECT_EQ(e.field(), "layers");
    EXPECT_NE(std::string(e.what()).find("fourier"), std::string::npos);
  }
  EXPECT_THROW(deserialize("version=1 kind=transformer hidden_dim=128 num_layers=2 layers="), ValidationError);
  EXPECT_THROW(deserialize("version=2 kind=rnn"), ParseError);
  EXPECT_THROW(deserialize("version=1 kind=cnn"), ParseError);
  EXPECT_THROW(deserialize(""), ParseError);
  EXPECT_THROW(deserialize("version=1 version=1"), ParseError);
  EXPECT_THROW(deserialize("version=1 kind=transformer hidden_dim=x num_layers=2 layers=sdp:2:512:1"), ParseError);
  EXPECT_THROW(deserialize("version=1 kind=rnn inputs=x,h outputs=n1 nodes=n0:linear|n1:relu edges=x>n0|h>n0|n0>n1"),
               ParseError);
  EXPECT_THROW(deserialize("version=1 kind=rnn inputs=x,h outputs=n1 nodes=n0:linear|n1:tanh edges=x>n0|n0>n0>n1"),
               ValidationError);
}

TEST(Genome, ParamCountClosedForms) {
  EXPECT_EQ(linear_param_count(16, 16), 16u * 16 + 16);
  // Vanilla cell: embedding, three layers of W x + U h + b, output head.
  const RnnDims d{50, 8, 16};
  const std::size_t expected = 50 * 8 + (8 * 16 + 16 * 16 + 16) + 2 * (16 * 16 + 16 * 16 + 16) + (16 * 50 + 50);
  EXPECT_EQ(param_count(vanilla_rnn_cell(), d), expected);

  TransformerGenome t{128, 2, {EncoderLayer{}, EncoderLayer{}}};
  const TransformerDims td{};
  auto before = param_count(t, td);
  t.layers[1].ff_dim = 1024;
  EXPECT_GT(param_count(t, td), before);
}

TEST(Genome, KeysAndBenchmarkTable) {
  Genome a = vanilla_rnn_cell();
  EXPECT_EQ(genome_key(a).size(), 16u);
  EXPECT_EQ(genome_key(a), genome_key(deserialize(serialize(a))));
  Genome b = TransformerGenome{128, 2, {EncoderLayer{}, EncoderLayer{}}};
  EXPECT_NE(genome_key(a), genome_key(b));

  const std::string table = "# comment\n\n" + serialize(a) + "\t4.5\tsource=x\n" + serialize(b) + "\t0.71\n";
  auto records = parse_benchmark(table);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].genome, a);
  EXPECT_EQ(records[0].trained_score, 4.5);
  EXPECT_EQ(records[0].metadata.at("source"), "x");
  EXPECT_EQ(parse_benchmark(format_benchmark(records)).size(), 2u);
  EXPECT_THROW(parse_benchmark(serialize(a) + "\tnan\n"), ParseError);
  EXPECT_THROW(parse_benchmark(serialize(a) + "\n"), ParseError);
}

}  // namespace
}  // namespace tfnas
