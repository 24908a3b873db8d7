#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tfnas/autodiff.hpp"
#include "tfnas/errors.hpp"

namespace tfnas {
namespace {

using oracle::max_fd_error;

using Fn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Contracts the output with fixed random weights so every output entry
// reaches the loss with a distinct coefficient.
double weighted_sum(const Tensor& out, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * w[i];
  return s;
}

// Reverse-mode gradient of every input against central differences on
// `trials` random draws; returns the largest relative error seen.
double check_primitive(const std::function<std::vector<Tensor>(std::mt19937_64&)>& make, const Fn& fn,
                       int trials = 20) {
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    auto inputs = make(rng);
    Tape tape;
    Tensor out = fn(tape, inputs);
    std::vector<double> w(out.numel());
    for (double& x : w) x = n(rng);
    Tensor loss = sum(tape, mul(tape, out, Tensor::from(out.shape(), w)));
    tape.backward(loss);
    auto f = [&] {
      Tape t;
      return weighted_sum(fn(t, inputs), w);
    };
    for (const Tensor& in : inputs)
      if (in.requires_grad()) worst = std::max(worst, max_fd_error(in, f));
  }
  return worst;
}

constexpr double kPrimitiveTolerance = 1e-4;

TEST(Autodiff, MatmulIdentityAndHandSum) {
  Tape tape;
  Tensor m = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor r = matmul(tape, eye, m);
  EXPECT_EQ(std::vector<double>(r.values().begin(), r.values().end()),
            std::vector<double>(m.values().begin(), m.values().end()));
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {1, 1});
  Tensor c = matmul(tape, a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 3.0);
  EXPECT_EQ(c[1], 7.0);
}

TEST(Autodiff, MatmulShapeMismatch) {
  Tape tape;
  EXPECT_THROW(matmul(tape, Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Autodiff, MatmulGradientOfSumOfProduct) {
  std::mt19937_64 rng(7);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = Tensor::from({4, 2}, {0.3, -1.2, 0.7, 2.0, -0.4, 0.9, 1.5, -0.8});
  Tape tape;
  tape.backward(sum(tape, matmul(tape, a, b)));
  auto f = [&] {
    Tape t;
    return sum(t, matmul(t, a, b)).item();
  };
  EXPECT_LT(max_fd_error(a, f), 1e-6);
}

TEST(Autodiff, ElementwiseValues) {
  Tape tape;
  Tensor x = Tensor::from({3}, {-1, 0, 2});
  Tensor r = relu(tape, x);
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 0.0);
  EXPECT_EQ(r[2], 2.0);
  Tensor z = Tensor::scalar(0.0, true);
  Tensor t = tanh(tape, z);
  EXPECT_EQ(t.item(), 0.0);
  tape.backward(t);
  EXPECT_DOUBLE_EQ(z.grad()[0], 1.0);
}

TEST(Autodiff, ElementwiseErrors) {
  Tape tape;
  EXPECT_THROW(log(tape, Tensor::from({2}, {1.0, 0.0})), DomainError);
  EXPECT_THROW(log(tape, Tensor::from({1}, {-3.0})), DomainError);
  EXPECT_THROW(add(tape, Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
  EXPECT_THROW(mul(tape, Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
}

TEST(Autodiff, GeluGradientAtFixedPoints) {
  for (double x0 : {-2.0, -0.5, 0.3, 1.7}) {
    Tensor x = Tensor::scalar(x0, true);
    Tape tape;
    tape.backward(gelu(tape, x));
    auto f = [&] {
      Tape t;
      return gelu(t, x).item();
    };
    EXPECT_LT(max_fd_error(x, f), 1e-5) << x0;
  }
}

TEST(Autodiff, SoftmaxValues) {
  Tape tape;
  Tensor u = softmax(tape, Tensor::from({3}, {0, 0, 0}), 0);
  for (double v : u.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  Tensor s = softmax(tape, Tensor::from({2}, {1000, 0}), 0);
  EXPECT_TRUE(all_finite(s.values()));
  EXPECT_NEAR(s[0], 1.0, 1e-15);
  EXPECT_NEAR(s[1], 0.0, 1e-15);
}

TEST(Autodiff, SoftmaxRowsSumToOneAndPositive) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor(rng, {4, 7}, -30.0, 30.0);
    Tape tape;
    for (std::size_t axis : {0u, 1u}) {
      Tensor s = softmax(tape, x, axis);
      const std::size_t rows = axis == 1 ? 4 : 7;
      for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        const std::size_t len = axis == 1 ? 7 : 4;
        for (std::size_t j = 0; j < len; ++j) {
          double v = axis == 1 ? s[r * 7 + j] : s[j * 7 + r];
          EXPECT_GT(v, 0.0);
          total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
    }
  }
}

TEST(Autodiff, SoftmaxJacobianLength5) {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor(rng, {5});
  for (std::size_t k = 0; k < 5; ++k) {
    x.zero_grad();
    Tape tape;
    tape.backward(select(tape, softmax(tape, x, 0), 0, k));
    auto f = [&] {
      Tape t;
      return softmax(t, x, 0)[k];
    };
    EXPECT_LT(max_fd_error(x, f), 1e-6) << k;
  }
}

TEST(Autodiff, CrossEntropyUniformAndConcentrated) {
  Tape tape;
  std::vector<std::int64_t> targets = {0, 3, 5};
  EXPECT_NEAR(cross_entropy(tape, Tensor::zeros({3, 6}), targets).item(), std::log(6.0), 1e-14);
  double previous = 1e9;
  for (double c : {1.0, 10.0, 100.0}) {
    Tensor logits = Tensor::zeros({1, 4});
    logits.mutable_values()[2] = c;
    std::vector<std::int64_t> t = {2};
    double loss = cross_entropy(tape, logits, t).item();
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-40);
}

TEST(Autodiff, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  std::mt19937_64 rng(5);
  Tensor logits = random_tensor(rng, {3, 5}, -2.0, 2.0);
  std::vector<std::int64_t> targets = {4, 0, 2};
  Tape tape;
  tape.backward(cross_entropy(tape, logits, targets));
  auto f = [&] {
    Tape t;
    return cross_entropy(t, logits, targets).item();
  };
  EXPECT_LT(max_fd_error(logits, f), 1e-6);
  for (std::size_t r = 0; r < 3; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < 5; ++c) z += std::exp(logits[r * 5 + c]);
    for (std::size_t c = 0; c < 5; ++c) {
      double expected = (std::exp(logits[r * 5 + c]) / z - (static_cast<std::int64_t>(c) == targets[r])) / 3.0;
      EXPECT_NEAR(logits.grad()[r * 5 + c], expected, 1e-15);
    }
  }
}

TEST(Autodiff, CrossEntropyTargetOutOfRange) {
  Tape tape;
  std::vector<std::int64_t> targets = {5};
  EXPECT_THROW(cross_entropy(tape, Tensor::zeros({1, 5}), targets), IndexError);
}

TEST(Autodiff, BackwardAnalyticCases) {
  Tensor w = Tensor::scalar(3.0, true);
  Tape tape;
  tape.backward(mul(tape, w, w));
  EXPECT_DOUBLE_EQ(w.grad()[0], 6.0);

  Tensor v = Tensor::scalar(0.0, true);
  Tape chain;
  chain.backward(tanh(chain, scale(chain, v, 2.0)));
  EXPECT_DOUBLE_EQ(v.grad()[0], 2.0);
}

TEST(Autodiff, BackwardRequiresScalar) {
  Tensor w = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  Tensor y = mul(tape, w, w);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Autodiff, GradientsAccumulateAcrossUsesAndCalls) {
  Tensor w = Tensor::scalar(2.0, true);
  Tape tape;
  Tensor y = add(tape, mul(tape, w, w), scale(tape, w, 3.0));
  tape.backward(y);
  EXPECT_DOUBLE_EQ(w.grad()[0], 7.0);
  Tape again;
  again.backward(scale(again, w, 1.0));
  EXPECT_DOUBLE_EQ(w.grad()[0], 8.0);
  w.zero_grad();
  EXPECT_DOUBLE_EQ(w.grad()[0], 0.0);
}

TEST(Autodiff, TapeRecordsOnlyWhenGradientNeeded) {
  Tape tape;
  matmul(tape, Tensor::zeros({2, 2}), Tensor::zeros({2, 2}));
  EXPECT_TRUE(tape.empty());
  matmul(tape, Tensor::zeros({2, 2}, true), Tensor::zeros({2, 2}));
  EXPECT_EQ(tape.size(), 1u);
}

// Three-parameter toy recurrence h_t = tanh(a x_t + b h_{t-1} + c) with a
// squared readout, unrolled through the tape.
TEST(Autodiff, ToyCellLossGradient) {
  Tensor a = Tensor::scalar(0.7, true), b = Tensor::scalar(-0.4, true), c = Tensor::scalar(0.1, true);
  const std::vector<double> xs = {0.5, -1.0, 2.0, 0.25};
  auto build = [&](Tape& tape) {
    Tensor h = Tensor::scalar(0.0);
    for (double x : xs) {
      Tensor pre = add(tape, add(tape, scale(tape, a, x), mul(tape, b, h)), c);
      h = tanh(tape, pre);
    }
    return mul(tape, h, h);
  };
  Tape tape;
  tape.backward(build(tape));
  auto f = [&] {
    Tape t;
    return build(t).item();
  };
  for (const Tensor* p : {&a, &b, &c}) EXPECT_LT(max_fd_error(*p, f), 1e-4);
}

TEST(Autodiff, TapeDeterminism) {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tensor x = random_tensor(rng, {4, 6});
    Tensor w = random_tensor(rng, {6, 3});
    Tape tape;
    Tensor y = softmax(tape, gelu(tape, matmul(tape, x, w)), 1);
    Tensor loss = sum(tape, mul(tape, y, y));
    tape.backward(loss);
    std::vector<double> out(loss.values().begin(), loss.values().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

// ---------------------------------------------------------------------------
// Finite-difference sweep over every primitive, 20 random draws each.
// ---------------------------------------------------------------------------

struct PrimitiveCase {
  std::string name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> make;
  Fn fn;
};

std::vector<PrimitiveCase> primitive_cases() {
  auto one = [](Shape s, double lo = -1.0, double hi = 1.0) {
    return [s, lo, hi](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, s, lo, hi)}; };
  };
  auto two = [](Shape s1, Shape s2) {
    return [s1, s2](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor(r, s1), random_tensor(r, s2)}; };
  };
  std::vector<PrimitiveCase> cases;
  cases.push_back({"matmul", two({2, 3, 4}, {4, 5}), [](Tape& t, auto& in) { return matmul(t, in[0], in[1]); }});
  cases.push_back({"batched_matmul", two({2, 3, 4}, {2, 4, 5}),
                   [](Tape& t, auto& in) { return batched_matmul(t, in[0], in[1]); }});
  cases.push_back({"batched_matmul_t", two({2, 3, 4}, {2, 5, 4}),
                   [](Tape& t, auto& in) { return batched_matmul(t, in[0], in[1], true); }});
  cases.push_back({"mix_sequence", two({4, 4}, {2, 4, 3}),
                   [](Tape& t, auto& in) { return mix_sequence(t, in[0], in[1]); }});
  cases.push_back({"add", two({3, 4}, {3, 4}), [](Tape& t, auto& in) { return add(t, in[0], in[1]); }});
  cases.push_back({"add_scalar", two({3, 4}, {1}), [](Tape& t, auto& in) { return add(t, in[0], in[1]); }});
  cases.push_back({"sub", two({3, 4}, {3, 4}), [](Tape& t, auto& in) { return sub(t, in[0], in[1]); }});
  cases.push_back({"sub_scalar", two({1}, {3, 4}), [](Tape& t, auto& in) { return sub(t, in[0], in[1]); }});
  cases.push_back({"mul", two({3, 4}, {3, 4}), [](Tape& t, auto& in) { return mul(t, in[0], in[1]); }});
  cases.push_back({"mul_scalar", two({3, 4}, {1}), [](Tape& t, auto& in) { return mul(t, in[0], in[1]); }});
  cases.push_back({"scale", one({3, 4}), [](Tape& t, auto& in) { return scale(t, in[0], -1.7); }});
  cases.push_back({"tanh", one({3, 4}, -3, 3), [](Tape& t, auto& in) { return tanh(t, in[0]); }});
  cases.push_back({"sigmoid", one({3, 4}, -3, 3), [](Tape& t, auto& in) { return sigmoid(t, in[0]); }});
  cases.push_back({"relu", one({3, 4}, 0.1, 2), [](Tape& t, auto& in) { return relu(t, in[0]); }});
  cases.push_back({"relu_negative", one({3, 4}, -2, -0.1), [](Tape& t, auto& in) { return relu(t, in[0]); }});
  cases.push_back({"gelu", one({3, 4}, -3, 3), [](Tape& t, auto& in) { return gelu(t, in[0]); }});
  cases.push_back({"exp", one({3, 4}, -2, 2), [](Tape& t, auto& in) { return exp(t, in[0]); }});
  cases.push_back({"log", one({3, 4}, 0.2, 3), [](Tape& t, auto& in) { return log(t, in[0]); }});
  cases.push_back({"power", one({3, 4}, 0.2, 3), [](Tape& t, auto& in) { return power(t, in[0], 2.5); }});
  cases.push_back({"add_bias", two({2, 3, 4}, {4}), [](Tape& t, auto& in) { return add_bias(t, in[0], in[1]); }});
  cases.push_back({"softmax_last", one({3, 5}, -2, 2), [](Tape& t, auto& in) { return softmax(t, in[0], 1); }});
  cases.push_back({"softmax_first", one({3, 5}, -2, 2), [](Tape& t, auto& in) { return softmax(t, in[0], 0); }});
  cases.push_back({"softmax_middle", one({2, 3, 4}, -2, 2), [](Tape& t, auto& in) { return softmax(t, in[0], 1); }});
  cases.push_back({"layer_norm",
                   [](std::mt19937_64& r) {
                     return std::vector<Tensor>{random_tensor(r, {3, 6}, -2, 2), random_tensor(r, {6}),
                                                random_tensor(r, {6})};
                   },
                   [](Tape& t, auto& in) { return layer_norm(t, in[0], in[1], in[2]); }});
  cases.push_back({"cross_entropy", one({4, 6}, -2, 2), [](Tape& t, auto& in) {
                     static const std::vector<std::int64_t> targets = {5, 0, 3, 3};
                     return cross_entropy(t, in[0], targets);
                   }});
  cases.push_back({"sum", one({3, 4}), [](Tape& t, auto& in) { return sum(t, in[0]); }});
  cases.push_back({"mean", one({3, 4}), [](Tape& t, auto& in) { return mean(t, in[0]); }});
  cases.push_back({"gather_rows", one({5, 3}), [](Tape& t, auto& in) {
                     static const std::vector<std::int64_t> ids = {4, 0, 4, 2, 1, 1};
                     return gather_rows(t, in[0], ids, {2, 3});
                   }});
  cases.push_back({"select", one({2, 3, 4}), [](Tape& t, auto& in) { return select(t, in[0], 1, 2); }});
  cases.push_back({"slice_last", one({2, 3, 6}), [](Tape& t, auto& in) { return slice_last(t, in[0], 1, 4); }});
  cases.push_back({"concat_last", two({2, 3, 2}, {2, 3, 4}),
                   [](Tape& t, auto& in) { return concat_last(t, {in[0], in[1], in[0]}); }});
  cases.push_back({"reshape", one({2, 6}), [](Tape& t, auto& in) { return reshape(t, in[0], {3, 4}); }});
  cases.push_back({"dynamic_conv", two({2, 6, 3}, {2, 6, 4}),
                   [](Tape& t, auto& in) { return dynamic_conv(t, in[0], in[1]); }});
  return cases;
}

class PrimitiveGradient : public ::testing::TestWithParam<PrimitiveCase> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
  const auto& c = GetParam();
  EXPECT_LT(check_primitive(c.make, c.fn), kPrimitiveTolerance) << c.name;
}

INSTANTIATE_TEST_SUITE_P(All, PrimitiveGradient, ::testing::ValuesIn(primitive_cases()),
                         [](const auto& info) { return info.param.name; });

}  // namespace
}  // namespace tfnas
