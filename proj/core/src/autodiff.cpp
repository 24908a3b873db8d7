#include "tfnas/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;
using Index = Eigen::Index;

ConstMap view(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return ConstMap(data.data(), static_cast<Index>(rows), static_cast<Index>(cols));
}

MutMap view(std::span<double> data, std::size_t rows, std::size_t cols) {
  return MutMap(data.data(), static_cast<Index>(rows), static_cast<Index>(cols));
}

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined operand");
}

// Broadcast-compatible elementwise operands: equal shapes or a single element.
Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.numel() == 1) return a.shape();
  if (a.numel() == 1) return b.shape();
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                       shape_string(b.shape()));
}

// Adds `g` into the gradient of `t`, summing when `t` was broadcast.
void accumulate(const Tensor& t, std::span<const double> g, std::span<const double> factor = {}) {
  if (!t.requires_grad()) return;
  auto dst = t.mutable_grad();
  const bool scalar = t.numel() == 1 && g.size() != 1;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double v = factor.empty() ? g[i] : g[i] * factor[factor.size() == 1 ? 0 : i];
    dst[scalar ? 0 : i] += v;
  }
}

double at(std::span<const double> v, std::size_t i) { return v.size() == 1 ? v[0] : v[i]; }

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

// --- Tape --------------------------------------------------------------------

void Tape::record(std::vector<Tensor> inputs, Tensor output, Rule rule) {
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(rule)});
}

void Tape::backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) throw ContractError("backward: loss must be a scalar, got " + shape_string(loss.shape()));
  if (!loss.requires_grad()) throw ContractError("backward: loss does not depend on any tensor requiring gradients");
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.has_grad()) it->rule();
  }
}

// --- matrix products -----------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() < 2 || b.rank() != 2) {
    throw DimensionError("matmul: expected [..., k] x [k, n], got " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const auto k = a.shape().back();
  if (k != b.dim(0)) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const auto n = b.dim(1);
  const auto m = a.numel() / k;
  Shape shape = a.shape();
  shape.back() = n;
  std::vector<double> out(m * n);
  view(std::span<double>(out), m, n).noalias() = view(a.values(), m, k) * view(b.values(), k, n);
  const bool grad = needs_grad({&a, &b});
  Tensor result = Tensor::from(std::move(shape), std::move(out), grad);
  if (grad) {
    tape.record({a, b}, result, [a, b, result, m, k, n]() mutable {
      auto g = view(result.grad(), m, n);
      if (a.requires_grad()) view(a.mutable_grad(), m, k).noalias() += g * view(b.values(), k, n).transpose();
      if (b.requires_grad()) view(b.mutable_grad(), k, n).noalias() += view(a.values(), m, k).transpose() * g;
    });
  }
  return result;
}

Tensor batched_matmul(Tape& tape, const Tensor& a, const Tensor& b, bool transpose_b) {
  require_defined(a, "batched_matmul");
  require_defined(b, "batched_matmul");
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw DimensionError("batched_matmul: expected [B, m, k] x [B, k, n], got " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const auto batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const auto bk = transpose_b ? b.dim(2) : b.dim(1);
  const auto n = transpose_b ? b.dim(1) : b.dim(2);
  if (bk != k) {
    throw DimensionError("batched_matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + (transpose_b ? " (b transposed)" : ""));
  }
  std::vector<double> out(batch * m * n);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < batch; ++i) {
    auto o = view(std::span<double>(out).subspan(i * m * n, m * n), m, n);
    auto ai = view(av.subspan(i * m * k, m * k), m, k);
    if (transpose_b) {
      o.noalias() = ai * view(bv.subspan(i * n * k, n * k), n, k).transpose();
    } else {
      o.noalias() = ai * view(bv.subspan(i * k * n, k * n), k, n);
    }
  }
  const bool grad = needs_grad({&a, &b});
  Tensor result = Tensor::from({batch, m, n}, std::move(out), grad);
  if (grad) {
    tape.record({a, b}, result, [a, b, result, batch, m, k, n, transpose_b]() mutable {
      const auto g = result.grad();
      for (std::size_t i = 0; i < batch; ++i) {
        auto gi = view(g.subspan(i * m * n, m * n), m, n);
        if (a.requires_grad()) {
          auto ga = view(a.mutable_grad().subspan(i * m * k, m * k), m, k);
          if (transpose_b) {
            ga.noalias() += gi * view(b.values().subspan(i * n * k, n * k), n, k);
          } else {
            ga.noalias() += gi * view(b.values().subspan(i * k * n, k * n), k, n).transpose();
          }
        }
        if (b.requires_grad()) {
          auto ai = view(a.values().subspan(i * m * k, m * k), m, k);
          if (transpose_b) {
            view(b.mutable_grad().subspan(i * n * k, n * k), n, k).noalias() += gi.transpose() * ai;
          } else {
            view(b.mutable_grad().subspan(i * k * n, k * n), k, n).noalias() += ai.transpose() * gi;
          }
        }
      }
    });
  }
  return result;
}

Tensor mix_sequence(Tape& tape, const Tensor& basis, const Tensor& x) {
  require_defined(basis, "mix_sequence");
  require_defined(x, "mix_sequence");
  if (basis.rank() != 2 || x.rank() != 3 || basis.dim(0) != x.dim(1) || basis.dim(1) != x.dim(1)) {
    throw DimensionError("mix_sequence: expected [T, T] and [N, T, C], got " + shape_string(basis.shape()) +
                         " and " + shape_string(x.shape()));
  }
  const auto batch = x.dim(0), len = x.dim(1), ch = x.dim(2);
  std::vector<double> out(x.numel());
  const auto p = view(basis.values(), len, len);
  for (std::size_t i = 0; i < batch; ++i) {
    view(std::span<double>(out).subspan(i * len * ch, len * ch), len, ch).noalias() =
        p * view(x.values().subspan(i * len * ch, len * ch), len, ch);
  }
  const bool grad = needs_grad({&basis, &x});
  Tensor result = Tensor::from(x.shape(), std::move(out), grad);
  if (grad) {
    tape.record({basis, x}, result, [basis, x, result, batch, len, ch]() mutable {
      const auto g = result.grad();
      for (std::size_t i = 0; i < batch; ++i) {
        auto gi = view(g.subspan(i * len * ch, len * ch), len, ch);
        if (x.requires_grad()) {
          view(x.mutable_grad().subspan(i * len * ch, len * ch), len, ch).noalias() +=
              view(basis.values(), len, len).transpose() * gi;
        }
        if (basis.requires_grad()) {
          view(basis.mutable_grad(), len, len).noalias() +=
              gi * view(x.values().subspan(i * len * ch, len * ch), len, ch).transpose();
        }
      }
    });
  }
  return result;
}

// --- elementwise -----------------------------------------------------------------

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  auto shape = broadcast_shape(a, b, "add");
  const auto n = shape_numel(shape);
  std::vector<double> out(n);
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = at(av, i) + at(bv, i);
  const bool grad = needs_grad({&a, &b});
  Tensor result = Tensor::from(std::move(shape), std::move(out), grad);
  if (grad) {
    tape.record({a, b}, result, [a, b, result]() mutable {
      accumulate(a, result.grad());
      accumulate(b, result.grad());
    });
  }
  return result;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  auto shape = broadcast_shape(a, b, "sub");
  const auto n = shape_numel(shape);
  std::vector<double> out(n);
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = at(av, i) - at(bv, i);
  const bool grad = needs_grad({&a, &b});
  Tensor result = Tensor::from(std::move(shape), std::move(out), grad);
  if (grad) {
    tape.record({a, b}, result, [a, b, result]() mutable {
      static const std::vector<double> minus_one{-1.0};
      accumulate(a, result.grad());
      accumulate(b, result.grad(), minus_one);
    });
  }
  return result;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  auto shape = broadcast_shape(a, b, "mul");
  const auto n = shape_numel(shape);
  std::vector<double> out(n);
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = at(av, i) * at(bv, i);
  const bool grad = needs_grad({&a, &b});
  Tensor result = Tensor::from(std::move(shape), std::move(out), grad);
  if (grad) {
    tape.record({a, b}, result, [a, b, result, n]() mutable {
      const auto g = result.grad();
      const auto av = a.values(), bv = b.values();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < n; ++i) ga[a.numel() == 1 ? 0 : i] += g[i] * at(bv, i);
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < n; ++i) gb[b.numel() == 1 ? 0 : i] += g[i] * at(av, i);
      }
    });
  }
  return result;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  const bool grad = a.requires_grad();
  Tensor result = Tensor::from(a.shape(), std::move(out), grad);
  if (grad) {
    tape.record({a}, result, [a, result, factor]() mutable {
      const std::vector<double> f{factor};
      accumulate(a, result.grad(), f);
    });
  }
  return result;
}

Tensor unary(Tape& tape, UnaryOp op, const Tensor& a) {
  require_defined(a, "unary");
  const auto x = a.values();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    switch (op) {
      case UnaryOp::kTanh: y[i] = std::tanh(v); break;
      case UnaryOp::kSigmoid: y[i] = 1.0 / (1.0 + std::exp(-v)); break;
      case UnaryOp::kRelu: y[i] = v > 0.0 ? v : 0.0; break;
      case UnaryOp::kGelu: y[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); break;
      case UnaryOp::kExp: y[i] = std::exp(v); break;
      case UnaryOp::kLog:
        if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
        y[i] = std::log(v);
        break;
    }
  }
  const bool grad = a.requires_grad();
  Tensor result = Tensor::from(a.shape(), std::move(y), grad);
  if (grad) {
    tape.record({a}, result, [a, result, op]() mutable {
      const auto g = result.grad();
      const auto x = a.values();
      const auto y = result.values();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = 0.0;
        switch (op) {
          case UnaryOp::kTanh: d = 1.0 - y[i] * y[i]; break;
          case UnaryOp::kSigmoid: d = y[i] * (1.0 - y[i]); break;
          case UnaryOp::kRelu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
          case UnaryOp::kGelu:
            d = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2)) + x[i] * kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
            break;
          case UnaryOp::kExp: d = y[i]; break;
          case UnaryOp::kLog: d = 1.0 / x[i]; break;
        }
        ga[i] += g[i] * d;
      }
    });
  }
  return result;
}

Tensor power(Tape& tape, const Tensor& a, double exponent) {
  require_defined(a, "power");
  const auto x = a.values();
  const bool integral = std::floor(exponent) == exponent;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!integral && x[i] < 0.0) {
      throw DomainError("power: negative base " + std::to_string(x[i]) + " with non-integer exponent");
    }
    if (exponent < 0.0 && x[i] == 0.0) throw DomainError("power: zero base with negative exponent");
    y[i] = std::pow(x[i], exponent);
  }
  const bool grad = a.requires_grad();
  Tensor result = Tensor::from(a.shape(), std::move(y), grad);
  if (grad) {
    tape.record({a}, result, [a, result, exponent]() mutable {
      const auto g = result.grad();
      const auto x = a.values();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * exponent * std::pow(x[i], exponent - 1.0);
    });
  }
  return result;
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_bias");
  require_defined(bias, "add_bias");
  const auto c = x.shape().back();
  if (bias.rank() != 1 || bias.dim(0) != c) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match " + shape_string(x.shape()));
  }
  const auto rows = x.numel() / c;
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bv[j];
  }
  const bool grad = needs_grad({&x, &bias});
  Tensor result = Tensor::from(x.shape(), std::move(out), grad);
  if (grad) {
    tape.record({x, bias}, result, [x, bias, result, rows, c]() mutable {
      const auto g = result.grad();
      accumulate(x, g);
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
        }
      }
    });
  }
  return result;
}

// --- normalization and losses ---------------------------------------------------

Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  require_defined(x, "softmax");
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const auto len = shape[axis];
  const auto xv = x.values();
  std::vector<double> y(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const auto base = o * len * inner + in;
      double peak = xv[base];
      for (std::size_t j = 1; j < len; ++j) peak = std::max(peak, xv[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xv[base + j * inner] - peak);
        y[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) y[base + j * inner] /= total;
    }
  }
  const bool grad = x.requires_grad();
  Tensor result = Tensor::from(shape, std::move(y), grad);
  if (grad) {
    tape.record({x}, result, [x, result, outer, inner, len]() mutable {
      const auto g = result.grad();
      const auto y = result.values();
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const auto base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const auto idx = base + j * inner;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return result;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  const auto c = x.shape().back();
  if (gain.rank() != 1 || gain.dim(0) != c || bias.rank() != 1 || bias.dim(0) != c) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(c) + "]");
  }
  const auto rows = x.numel() / c;
  const auto xv = x.values();
  const auto gv = gain.values(), bv = bias.values();
  std::vector<double> y(xv.size());
  std::vector<double> normalized(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * inv_std[r];
      normalized[r * c + j] = h;
      y[r * c + j] = h * gv[j] + bv[j];
    }
  }
  const bool grad = needs_grad({&x, &gain, &bias});
  Tensor result = Tensor::from(x.shape(), std::move(y), grad);
  if (grad) {
    tape.record({x, gain, bias}, result,
                [x, gain, bias, result, rows, c, normalized = std::move(normalized),
                 inv_std = std::move(inv_std)]() mutable {
                  const auto g = result.grad();
                  const auto gv = gain.values();
                  if (gain.requires_grad()) {
                    auto gg = gain.mutable_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) gg[i % c] += g[i] * normalized[i];
                  }
                  if (bias.requires_grad()) {
                    auto gb = bias.mutable_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
                  }
                  if (x.requires_grad()) {
                    auto gx = x.mutable_grad();
                    const double inv_c = 1.0 / static_cast<double>(c);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double mean_d = 0.0, mean_dh = 0.0;
                      for (std::size_t j = 0; j < c; ++j) {
                        const double d = g[r * c + j] * gv[j];
                        mean_d += d;
                        mean_dh += d * normalized[r * c + j];
                      }
                      mean_d *= inv_c;
                      mean_dh *= inv_c;
                      for (std::size_t j = 0; j < c; ++j) {
                        const double d = g[r * c + j] * gv[j];
                        gx[r * c + j] += inv_std[r] * (d - mean_d - normalized[r * c + j] * mean_dh);
                      }
                    }
                  }
                });
  }
  return result;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::int64_t> targets) {
  require_defined(logits, "cross_entropy");
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [batch, classes]");
  const auto batch = logits.dim(0), classes = logits.dim(1);
  if (targets.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch " +
                         std::to_string(batch));
  }
  for (auto t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  const auto z = logits.values();
  std::vector<double> probs(z.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = z.data() + b * classes;
    const double peak = *std::max_element(row, row + classes);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(row[c] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(row[c] - lse);
    loss += lse - row[targets[b]];
  }
  loss /= static_cast<double>(batch);
  const bool grad = logits.requires_grad();
  Tensor result = Tensor::scalar(loss, grad);
  if (grad) {
    std::vector<std::int64_t> kept(targets.begin(), targets.end());
    tape.record({logits}, result,
                [logits, result, batch, classes, probs = std::move(probs), kept = std::move(kept)]() mutable {
                  const double g = result.grad()[0] / static_cast<double>(batch);
                  auto gl = logits.mutable_grad();
                  for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t c = 0; c < classes; ++c) {
                      const double onehot = static_cast<std::int64_t>(c) == kept[b] ? 1.0 : 0.0;
                      gl[b * classes + c] += g * (probs[b * classes + c] - onehot);
                    }
                  }
                });
  }
  return result;
}

// --- reductions -----------------------------------------------------------------

Tensor sum(Tape& tape, const Tensor& a) {
  require_defined(a, "sum");
  double total = 0.0;
  for (double v : a.values()) total += v;
  const bool grad = a.requires_grad();
  Tensor result = Tensor::scalar(total, grad);
  if (grad) {
    tape.record({a}, result, [a, result]() mutable {
      const double g = result.grad()[0];
      for (auto& v : a.mutable_grad()) v += g;
    });
  }
  return result;
}

Tensor mean(Tape& tape, const Tensor& a) { return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.numel())); }

// --- indexing and layout ------------------------------------------------------------

Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::int64_t> ids, const Shape& lead) {
  require_defined(table, "gather_rows");
  if (table.rank() != 2) throw DimensionError("gather_rows: table must be [rows, width]");
  if (ids.empty()) throw DimensionError("gather_rows: no ids");
  const auto rows = table.dim(0), width = table.dim(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw IndexError("gather_rows: id " + std::to_string(id) + " outside [0, " + std::to_string(rows) + ")");
    }
  }
  Shape shape = lead.empty() ? Shape{ids.size()} : lead;
  if (shape_numel(shape) != ids.size()) throw DimensionError("gather_rows: lead shape does not match id count");
  shape.push_back(width);
  std::vector<double> out(ids.size() * width);
  const auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width, out.begin() + i * width);
  }
  const bool grad = table.requires_grad();
  Tensor result = Tensor::from(std::move(shape), std::move(out), grad);
  if (grad) {
    std::vector<std::int64_t> kept(ids.begin(), ids.end());
    tape.record({table}, result, [table, result, width, kept = std::move(kept)]() mutable {
      const auto g = result.grad();
      auto gt = table.mutable_grad();
      for (std::size_t i = 0; i < kept.size(); ++i) {
        for (std::size_t j = 0; j < width; ++j) gt[kept[i] * width + j] += g[i * width + j];
      }
    });
  }
  return result;
}

Tensor select(Tape& tape, const Tensor& x, std::size_t axis, std::size_t index) {
  require_defined(x, "select");
  const auto& shape = x.shape();
  if (axis >= shape.size() || index >= shape[axis]) {
    throw IndexError("select: index " + std::to_string(index) + " on axis " + std::to_string(axis) + " of " +
                     shape_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const auto len = shape[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out_shape.push_back(shape[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(outer * inner);
  const auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * len + index) * inner), inner, out.begin() + o * inner);
  }
  const bool grad = x.requires_grad();
  Tensor result = Tensor::from(std::move(out_shape), std::move(out), grad);
  if (grad) {
    tape.record({x}, result, [x, result, outer, inner, len, index]() mutable {
      const auto g = result.grad();
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) gx[(o * len + index) * inner + i] += g[o * inner + i];
      }
    });
  }
  return result;
}

Tensor slice_last(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end) {
  require_defined(x, "slice_last");
  const auto c = x.shape().back();
  if (begin >= end || end > c) {
    throw DimensionError("slice_last: [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                         shape_string(x.shape()));
  }
  const auto rows = x.numel() / c, w = end - begin;
  Shape shape = x.shape();
  shape.back() = w;
  std::vector<double> out(rows * w);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(r * c + begin), w, out.begin() + r * w);
  }
  const bool grad = x.requires_grad();
  Tensor result = Tensor::from(std::move(shape), std::move(out), grad);
  if (grad) {
    tape.record({x}, result, [x, result, rows, c, w, begin]() mutable {
      const auto g = result.grad();
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < w; ++j) gx[r * c + begin + j] += g[r * w + j];
      }
    });
  }
  return result;
}

Tensor concat_last(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_last: no parts");
  Shape lead = parts.front().shape();
  lead.pop_back();
  std::size_t total = 0;
  bool grad = false;
  for (const auto& p : parts) {
    require_defined(p, "concat_last");
    Shape pl = p.shape();
    pl.pop_back();
    if (pl != lead) throw DimensionError("concat_last: leading extents differ");
    total += p.shape().back();
    grad = grad || p.requires_grad();
  }
  const auto rows = shape_numel(lead.empty() ? Shape{1} : lead);
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto w = p.shape().back();
    const auto pv = p.values();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * w), w, out.begin() + r * total + offset);
    }
    offset += w;
  }
  Shape shape = lead;
  shape.push_back(total);
  Tensor result = Tensor::from(std::move(shape), std::move(out), grad);
  if (grad) {
    tape.record(parts, result, [parts, result, rows, total]() mutable {
      const auto g = result.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        const auto w = p.shape().back();
        if (p.requires_grad()) {
          auto gp = p.mutable_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < w; ++j) gp[r * w + j] += g[r * total + offset + j];
          }
        }
        offset += w;
      }
    });
  }
  return result;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  const bool grad = x.requires_grad();
  Tensor result =
      Tensor::from(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()), grad);
  if (grad) {
    tape.record({x}, result, [x, result]() mutable { accumulate(x, result.grad()); });
  }
  return result;
}

Tensor dynamic_conv(Tape& tape, const Tensor& kernels, const Tensor& values) {
  require_defined(kernels, "dynamic_conv");
  require_defined(values, "dynamic_conv");
  if (kernels.rank() != 3 || values.rank() != 3 || kernels.dim(0) != values.dim(0) ||
      kernels.dim(1) != values.dim(1) || kernels.dim(2) % 2 == 0) {
    throw DimensionError("dynamic_conv: expected kernels [N, T, K odd] and values [N, T, C], got " +
                         shape_string(kernels.shape()) + " and " + shape_string(values.shape()));
  }
  const auto batch = values.dim(0), len = values.dim(1), ch = values.dim(2), taps = kernels.dim(2);
  const auto half = static_cast<std::ptrdiff_t>(taps / 2);
  const auto kv = kernels.values(), vv = values.values();
  std::vector<double> out(values.numel(), 0.0);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t t = 0; t < len; ++t) {
      double* o = out.data() + (n * len + t) * ch;
      for (std::size_t j = 0; j < taps; ++j) {
        const auto s = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - half;
        if (s < 0 || s >= static_cast<std::ptrdiff_t>(len)) continue;
        const double w = kv[(n * len + t) * taps + j];
        const double* v = vv.data() + (n * len + static_cast<std::size_t>(s)) * ch;
        for (std::size_t c = 0; c < ch; ++c) o[c] += w * v[c];
      }
    }
  }
  const bool grad = needs_grad({&kernels, &values});
  Tensor result = Tensor::from(values.shape(), std::move(out), grad);
  if (grad) {
    tape.record({kernels, values}, result, [kernels, values, result, batch, len, ch, taps, half]() mutable {
      const auto g = result.grad();
      const auto kv = kernels.values(), vv = values.values();
      std::span<double> gk, gv;
      if (kernels.requires_grad()) gk = kernels.mutable_grad();
      if (values.requires_grad()) gv = values.mutable_grad();
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t t = 0; t < len; ++t) {
          const double* go = g.data() + (n * len + t) * ch;
          for (std::size_t j = 0; j < taps; ++j) {
            const auto s = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - half;
            if (s < 0 || s >= static_cast<std::ptrdiff_t>(len)) continue;
            const auto kidx = (n * len + t) * taps + j;
            const auto vbase = (n * len + static_cast<std::size_t>(s)) * ch;
            if (!gk.empty()) {
              double acc = 0.0;
              for (std::size_t c = 0; c < ch; ++c) acc += go[c] * vv[vbase + c];
              gk[kidx] += acc;
            }
            if (!gv.empty()) {
              for (std::size_t c = 0; c < ch; ++c) gv[vbase + c] += kv[kidx] * go[c];
            }
          }
        }
      }
    });
  }
  return result;
}

}  // namespace tfnas
