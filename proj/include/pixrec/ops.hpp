#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pixrec/conv.hpp"
#include "pixrec/graph.hpp"

namespace pixrec {

// Scalar forms shared by the taped ops and the incremental decoder, so both
// evaluate identical floating-point expressions.
inline double relu_scalar(double x) { return x > 0.0 ? x : 0.0; }
inline double tanh_scalar(double x) { return std::tanh(x); }
inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// x [..., C] + b [C]
Var add_bias(const Var& x, const Var& b);
Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);

// Shape
Var reshape(const Var& x, Shape shape);
/// Channels [begin, end) of the last axis.
Var slice_last(const Var& x, std::size_t begin, std::size_t end);
Var concat_last(const std::vector<Var>& xs);

// Reductions
Var sum(const Var& x);
Var mean(const Var& x);
/// [m, k] x [k, n] -> [m, n]
Var matmul(const Var& a, const Var& b);

// Convolutions
struct ConvOptions {
  std::size_t stride = 1;
  Padding padding = Padding::same;
  /// Binary [kh, kw, Cin, Cout]; applied in forward and backward.
  const Tensor* mask = nullptr;
};

/// input [N, H, W, Cin], kernel [kh, kw, Cin, Cout].
Var conv2d(const Var& input, const Var& kernel, const ConvOptions& opts = {});
/// input [N, H, W, Cin], kernel [kh, kw, Cout, Cin] -> [N, H*stride, W*stride, Cout].
/// Exact adjoint of conv2d(stride, same) from the large grid to the small one.
Var transposed_conv2d(const Var& input, const Var& kernel, std::size_t stride);

// Softmax family, all along the last axis
Var log_sum_exp(const Var& v);
Var softmax(const Var& v);

/// Mean over rows of -log softmax(logits)[target]; logits viewed as [R, K].
Var cross_entropy(const Var& logits, std::span<const std::int32_t> targets);
/// Mean over rows of -(2 a[t] + b[t] - lse(a + b) - lse(a)).
Var dual_cross_entropy(const Var& a, const Var& b, std::span<const std::int32_t> targets);
/// Mean of (pred - target)^2.
Var mse(const Var& pred, const Var& target);

// Raw kernels for code that works outside a graph.
double log_sum_exp_row(std::span<const double> v);
void softmax_row(std::span<const double> v, std::span<double> out);

}  // namespace pixrec
