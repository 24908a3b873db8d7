#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "batches.hpp"
#include "oracles.hpp"
#include "tfnas/errors.hpp"
#include "tfnas/netbuild.hpp"

namespace tfnas {
namespace {

using oracle::max_fd_error;
using oracle::random_batch;

std::size_t registry_scalars(const Network& net) {
  std::size_t total = 0;
  for (const auto& e : net.parameters().entries()) total += e.tensor.numel();
  return total;
}

double loss_of(Network& net, const Minibatch& batch, const ForwardOptions& options = {}) {
  Tape tape;
  return net.forward(tape, batch, options).loss.item();
}

// Every parameter entry whose FD check we run: a strided subset.
std::vector<std::size_t> strided(std::size_t n, std::size_t count) {
  std::vector<std::size_t> out;
  const std::size_t step = std::max<std::size_t>(1, n / count);
  for (std::size_t i = 0; i < n; i += step) out.push_back(i);
  return out;
}

TEST(Netbuild, RnnShapesAndInitialLoss) {
  Rng rng(1);
  const RnnDims dims{50, 8, 16};
  auto net = build_rnn(vanilla_rnn_cell(), dims, rng);
  auto batch = random_batch(4, 6, 50, 2);
  Tape tape;
  auto r = net->forward(tape, batch);
  ASSERT_EQ(r.hidden_states.size(), 3u);
  for (const auto& h : r.hidden_states) EXPECT_EQ(h.shape(), (Shape{4, 16}));
  EXPECT_EQ(r.inputs.shape(), (Shape{4, 6, 8}));
  EXPECT_NEAR(r.loss.item(), std::log(50.0), 0.15 * std::log(50.0));
  EXPECT_FALSE(r.activation_codes.empty());
  EXPECT_EQ(r.activation_codes.inputs(), 4u);
}

TEST(Netbuild, RnnParameterCountMatchesRegistry) {
  Rng rng(3);
  const RnnDims dims{50, 8, 16};
  auto vanilla = build_rnn(vanilla_rnn_cell(), dims, rng);
  EXPECT_EQ(registry_scalars(*vanilla), param_count(vanilla_rnn_cell(), dims));
  EXPECT_EQ(vanilla->parameters().scalar_count(), registry_scalars(*vanilla));
  for (int i = 0; i < 50; ++i) {
    auto g = sample_rnn(rng, 3 + i % 10);
    auto net = build_rnn(g, {40, 6, 10}, rng);
    EXPECT_EQ(registry_scalars(*net), param_count(g, RnnDims{40, 6, 10})) << serialize(g);
  }
}

TEST(Netbuild, TransformerParameterCountMatchesRegistry) {
  Rng rng(4);
  const TransformerDims dims{60, 8};
  for (int i = 0; i < 50; ++i) {
    // Half the draws are forced to two layers; uniform draws are almost all four.
    auto g = sample_transformer(rng);
    if (i % 2) {
      g.num_layers = 2;
      g.layers.resize(2);
    }
    auto net = build_transformer(g, dims, rng);
    EXPECT_EQ(registry_scalars(*net), param_count(g, dims)) << serialize(g);
  }
}

TEST(Netbuild, SameSeedSameParameters) {
  auto g = sample_transformer(*std::make_unique<Rng>(8));
  Rng a(11), b(11);
  auto n1 = build_transformer(g, {30, 6}, a);
  auto n2 = build_transformer(g, {30, 6}, b);
  ASSERT_EQ(n1->parameters().size(), n2->parameters().size());
  for (std::size_t i = 0; i < n1->parameters().size(); ++i) {
    const auto& x = n1->parameters().entries()[i].tensor;
    const auto& y = n2->parameters().entries()[i].tensor;
    EXPECT_TRUE(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
  }
}

TEST(Netbuild, InitializationBounds) {
  Rng rng(12);
  const RnnDims dims{30, 8, 16};
  auto net = build_rnn(vanilla_rnn_cell(), dims, rng);
  const double bound = 1.0 / std::sqrt(16.0);
  for (const auto& e : net->parameters().entries())
    for (double v : e.tensor.values()) EXPECT_LE(std::abs(v), bound) << e.name;
}

TEST(Netbuild, InvalidGenomesRejected) {
  Rng rng(0);
  auto cyclic = vanilla_rnn_cell();
  cyclic.nodes.push_back({"n2", CellOp::kSum});
  cyclic.edges.push_back({"n1", "n2"});
  cyclic.edges.push_back({"n2", "n0"});
  cyclic.edges.push_back({"h", "n2"});
  EXPECT_THROW(build_rnn(cyclic, {}, rng), ValidationError);
  TransformerGenome empty{128, 2, {}};
  EXPECT_THROW(build_transformer(empty, {}, rng), ValidationError);
}

TEST(Netbuild, MinibatchValidation) {
  auto ok = random_batch(2, 3, 10, 0);
  EXPECT_NO_THROW(validate(ok, 10));
  auto bad = ok;
  bad.tokens[1] = 10;
  EXPECT_THROW(validate(bad, 10), IndexError);
  bad = ok;
  bad.batch_size = 1;
  bad.tokens.resize(3);
  bad.targets.resize(3);
  EXPECT_THROW(validate(bad, 10), ContractError);
  bad = ok;
  bad.tokens.pop_back();
  EXPECT_THROW(validate(bad, 10), DimensionError);
}

TEST(Netbuild, RnnCellParameterGradient) {
  Rng rng(21);
  auto net = build_rnn(vanilla_rnn_cell(), {20, 5, 6}, rng);
  auto batch = random_batch(3, 4, 20, 22);
  Tape tape;
  auto r = net->forward(tape, batch);
  tape.backward(r.loss);
  auto f = [&] { return loss_of(*net, batch); };
  for (const char* name : {"cell0.n0.w_x", "cell1.n0.w_h", "cell2.n0.bias"}) {
    const auto& p = net->parameters().at(name);
    EXPECT_LT(max_fd_error(p, f), 1e-4) << name;
  }
}

TEST(Netbuild, RnnSampledCellGradients) {
  Rng rng(31);
  for (int i = 0; i < 5; ++i) {
    auto g = sample_rnn(rng, 8);
    auto net = build_rnn(g, {15, 4, 5}, rng);
    auto batch = random_batch(2, 3, 15, 40 + i);
    Tape tape;
    tape.backward(net->forward(tape, batch).loss);
    auto f = [&] { return loss_of(*net, batch); };
    for (const auto& e : net->parameters().entries())
      EXPECT_LT(max_fd_error(e.tensor, f, strided(e.tensor.numel(), 6)), 1e-4) << serialize(g) << " " << e.name;
  }
}

TEST(Netbuild, TransformerShapesAndCaptures) {
  TransformerGenome g{128, 2, {{AttentionOp::kScaledDotProduct, 4, 512, 1}, {AttentionOp::kDct, 2, 512, 3}}};
  Rng rng(5);
  auto net = build_transformer(g, {40, 8}, rng);
  auto batch = random_batch(3, 8, 40, 6, true);
  Tape tape;
  auto r = net->forward(tape, batch);
  ASSERT_EQ(r.hidden_states.size(), 2u);
  for (const auto& h : r.hidden_states) EXPECT_EQ(h.shape(), (Shape{3, 8, 128}));
  ASSERT_EQ(r.heads.size(), 6u);
  EXPECT_EQ(net->head_count(), 6u);
  for (const auto& cap : r.heads) {
    const std::size_t heads = g.layers[cap.layer].num_heads;
    EXPECT_EQ(cap.output.shape(), (Shape{3, 8, 128 / heads}));
    EXPECT_EQ(cap.softmax.has_value(), cap.layer == 0);
    if (!cap.softmax) continue;
    EXPECT_EQ(cap.softmax->shape(), (Shape{3, 8, 8}));
    for (std::size_t row = 0; row < 3 * 8; ++row) {
      double total = 0.0;
      for (std::size_t j = 0; j < 8; ++j) total += (*cap.softmax)[row * 8 + j];
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
  EXPECT_TRUE(std::isfinite(r.loss.item()));
}

TEST(Netbuild, TransformerNeedsMaskedTargets) {
  Rng rng(5);
  auto net = build_transformer(TransformerGenome{128, 2, {EncoderLayer{}, EncoderLayer{}}}, {40, 8}, rng);
  auto batch = random_batch(2, 8, 40, 1, true);
  for (std::size_t i = 8; i < 16; ++i) batch.targets[i] = kIgnoreTarget;
  Tape tape;
  EXPECT_THROW(net->forward(tape, batch), ContractError);
  auto too_long = random_batch(2, 9, 40, 1, true);
  EXPECT_THROW(net->forward(tape, too_long), ContractError);
}

TEST(Netbuild, AttentionWeightGradient) {
  for (AttentionOp op : {AttentionOp::kScaledDotProduct, AttentionOp::kMultiplicative}) {
    TransformerGenome g{128, 2, {{op, 4, 512, 1}, {AttentionOp::kConv5, 2, 512, 1}}};
    Rng rng(9);
    auto net = build_transformer(g, {30, 6}, rng);
    auto batch = random_batch(2, 6, 30, 10, true);
    Tape tape;
    tape.backward(net->forward(tape, batch).loss);
    auto f = [&] { return loss_of(*net, batch); };
    std::vector<const char*> names = {"layer0.head1.wq", "layer0.head2.wk", "layer0.head3.wv",
                                      "layer1.head0.kernel.weight"};
    if (op == AttentionOp::kMultiplicative) names.push_back("layer0.head0.wscore");
    for (const char* name : names) {
      const auto& p = net->parameters().at(name);
      EXPECT_LT(max_fd_error(p, f, strided(p.numel(), 12)), 1e-4) << name;
    }
  }
}

TEST(Netbuild, DftOfConstantSignal) {
  const std::size_t t = 8;
  Tensor basis = dft_basis(t);
  Tensor x = Tensor::filled({1, t, 2}, 0.5);
  Tape tape;
  Tensor y = mix_sequence(tape, basis, x);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(y[c], 0.5 * std::sqrt(8.0), 1e-13);
  for (std::size_t k = 1; k < t; ++k)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(y[k * 2 + c], 0.0, 1e-13);

  // Whole network: constant tokens and no positional signal make the
  // first layer's input constant along the sequence.
  TransformerGenome g{128, 2, {{AttentionOp::kDft, 2, 512, 1}, EncoderLayer{}}};
  Rng rng(3);
  auto net = build_transformer(g, {20, t}, rng);
  for (double& v : net->parameters().at("position_embedding").mutable_values()) v = 0.0;
  Minibatch batch;
  batch.batch_size = 2;
  batch.seq_len = t;
  batch.tokens.assign(2 * t, 7);
  batch.targets.assign(2 * t, kIgnoreTarget);
  batch.targets[3] = batch.targets[t + 5] = 7;
  Tape net_tape;
  auto r = net->forward(net_tape, batch);
  for (std::size_t h = 0; h < 2; ++h) {
    const Tensor& out = r.heads[h].output;
    const std::size_t dh = out.dim(2);
    double zero_freq = 0.0, rest = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t k = 0; k < t; ++k)
        for (std::size_t c = 0; c < dh; ++c) (k == 0 ? zero_freq : rest) += std::abs(out[(n * t + k) * dh + c]);
    EXPECT_GT(zero_freq, 0.0);
    EXPECT_LT(rest, 1e-12 * zero_freq);
  }
}

TEST(Netbuild, DctBasisOrthonormal) {
  Tensor b = dct_basis(7);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      double dot = 0.0;
      for (std::size_t s = 0; s < 7; ++s) dot += b[i * 7 + s] * b[j * 7 + s];
      EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-13);
    }
}

TEST(Netbuild, Determinism) {
  auto run = [] {
    TransformerGenome g{128, 2, {{AttentionOp::kMultiplicative, 2, 512, 3}, {AttentionOp::kConv9, 4, 1024, 1}}};
    Rng rng(77);
    auto net = build_transformer(g, {25, 8}, rng);
    auto batch = random_batch(3, 8, 25, 78, true);
    Tape tape;
    auto r = net->forward(tape, batch);
    tape.backward(r.loss);
    std::vector<double> out = {r.loss.item()};
    for (const auto& cap : r.heads) out.insert(out.end(), cap.output.values().begin(), cap.output.values().end());
    const auto& w = net->parameters().at("layer1.head3.wv");
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

// All 6 operators x both head counts x both layer counts build and run
// forward + backward.
TEST(Netbuild, StratifiedGridRuns) {
  Rng rng(2);
  for (AttentionOp op : kAllAttentionOps)
    for (std::size_t heads : kHeadCounts)
      for (std::size_t layers : kLayerCounts) {
        TransformerGenome g;
        g.hidden_dim = kHiddenDims[(heads + layers) % 2];
        g.num_layers = layers;
        for (std::size_t l = 0; l < layers; ++l)
          g.layers.push_back({l == 0 ? op : kAllAttentionOps[(l + static_cast<std::size_t>(op)) % 6], heads,
                              kFeedForwardDims[l % 2], kFeedForwardStacks[(l / 2) % 2]});
        auto net = build_transformer(g, {30, 6}, rng);
        auto batch = random_batch(2, 6, 30, rng(), true);
        Tape tape;
        ForwardResult r;
        ASSERT_NO_THROW(r = net->forward(tape, batch)) << serialize(g);
        ASSERT_NO_THROW(tape.backward(r.loss));
        EXPECT_TRUE(all_finite(r.inputs.grad()));
        std::size_t expected_heads = 0;
        for (const auto& l : g.layers) expected_heads += l.num_heads;
        EXPECT_EQ(r.heads.size(), expected_heads);
      }
}

TEST(Netbuild, ActivationCodesHamming) {
  ActivationCodes codes(2);
  codes.append(Tensor::from({2, 3}, {1, -1, 1, -1, -1, 1}), 0.0);
  codes.append(Tensor::from({2, 70}, std::vector<double>(140, 0.7)), 0.5);
  EXPECT_EQ(codes.bit_count(), 73u);
  EXPECT_TRUE(codes.bit(0, 0));
  EXPECT_FALSE(codes.bit(1, 0));
  EXPECT_EQ(codes.hamming(0, 1), 1u);
  EXPECT_EQ(codes.hamming(1, 1), 0u);
  EXPECT_THROW(codes.append(Tensor::zeros({3}), 0.0), DimensionError);
}

}  // namespace
}  // namespace tfnas
