#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "tfnas/tensor.hpp"

namespace tfnas {

// Ordered record of primitive operations for reverse-mode differentiation.
//
// Operations are appended as they execute, so the record is topologically
// ordered by construction. An operation is recorded only if one of its
// inputs requires a gradient. A tape belongs to one evaluation context.
class Tape {
 public:
  using Rule = std::function<void()>;

  void record(std::vector<Tensor> inputs, Tensor output, Rule rule);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded rule once, newest
  // first. Gradients accumulate into existing buffers; zeroing them between
  // evaluations is the caller's job.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    Rule rule;
  };
  std::vector<Entry> entries_;
};

enum class UnaryOp { kTanh, kSigmoid, kRelu, kGelu, kExp, kLog };

// --- matrix products -------------------------------------------------------

// a: [..., k] (leading extents flattened into rows), b: [k, n] -> [..., n].
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// a: [B, m, k], b: [B, k, n] (or [B, n, k] with transpose_b) -> [B, m, n].
Tensor batched_matmul(Tape& tape, const Tensor& a, const Tensor& b, bool transpose_b = false);
// basis: [T, T], x: [N, T, C] -> out[n] = basis * x[n].
Tensor mix_sequence(Tape& tape, const Tensor& basis, const Tensor& x);

// --- elementwise -----------------------------------------------------------
// Operands must share a shape, or one of them must hold a single element.

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor unary(Tape& tape, UnaryOp op, const Tensor& a);
Tensor power(Tape& tape, const Tensor& a, double exponent);

inline Tensor tanh(Tape& tape, const Tensor& a) { return unary(tape, UnaryOp::kTanh, a); }
inline Tensor sigmoid(Tape& tape, const Tensor& a) { return unary(tape, UnaryOp::kSigmoid, a); }
inline Tensor relu(Tape& tape, const Tensor& a) { return unary(tape, UnaryOp::kRelu, a); }
inline Tensor gelu(Tape& tape, const Tensor& a) { return unary(tape, UnaryOp::kGelu, a); }
inline Tensor exp(Tape& tape, const Tensor& a) { return unary(tape, UnaryOp::kExp, a); }
inline Tensor log(Tape& tape, const Tensor& a) { return unary(tape, UnaryOp::kLog, a); }

// x: [..., c], bias: [c].
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);

// --- normalization and losses ----------------------------------------------

// Max-subtracted softmax along `axis`.
Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis);
// Normalizes over the last axis, then applies gain and bias ([c] each).
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
// Mean negative log-likelihood of `targets` under logits [batch, classes].
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::int64_t> targets);

// --- reductions --------------------------------------------------------------

Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);

// --- indexing and layout ---------------------------------------------------------

// Row lookup: table [V, E], ids -> [ids.size(), E], reshaped to lead ++ [E]
// when `lead` is given.
Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::int64_t> ids, const Shape& lead = {});
// Drops `axis`, keeping position `index` along it.
Tensor select(Tape& tape, const Tensor& x, std::size_t axis, std::size_t index);
// Columns [begin, end) of the last axis.
Tensor slice_last(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end);
// Concatenates along the last axis; leading extents must agree.
Tensor concat_last(Tape& tape, const std::vector<Tensor>& parts);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

// Per-position depthwise convolution along the sequence axis.
// kernels: [N, T, K] (K odd), values: [N, T, C]; zero padding at both ends.
// out[n, t, c] = sum_j kernels[n, t, j] * values[n, t + j - K/2, c].
Tensor dynamic_conv(Tape& tape, const Tensor& kernels, const Tensor& values);

}  // namespace tfnas
