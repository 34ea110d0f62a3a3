#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mvit/tensor.hpp"

// Differentiable primitives. Every op records a backward closure when any input requires a
// gradient, and throws DimensionError on shape disagreement.
namespace mvit::ops {

// Elementwise arithmetic. `b` may match `a` exactly or match a trailing suffix of a's shape,
// in which case it is broadcast over the leading axes (bias, positional table, global gate).
// A single-element `b` broadcasts everywhere.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// `x * g` where g's shape is a leading prefix of x's shape; g is broadcast over the trailing
/// axes. With x [B,C,H,W] and g [B,C] this is the squeeze-excitation channel scale.
Tensor mul_prefix(const Tensor& x, const Tensor& g);

/// 2-D product [m,k] x [k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product over identical leading axes: [...,m,k] x [...,k,n].
Tensor bmm(const Tensor& a, const Tensor& b);

/// Affine map over the trailing axis; `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv2dOptions {
    std::pair<std::size_t, std::size_t> stride{1, 1};
    std::pair<std::size_t, std::size_t> padding{0, 0};
    std::size_t groups = 1;
};

/// Cross-correlation over x [B,Cin,H,W] with weight [Cout,Cin/groups,kh,kw]; bias may be
/// undefined. Output extent is floor((H + 2p - k) / s) + 1 and must be at least 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& options);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);

/// [B,C,H,W] -> [B,C].
Tensor global_avg_pool(const Tensor& x);
/// [B,C,H,W] -> [B,C,oh,ow]; bin i spans [floor(i*H/oh), floor((i+1)*H/oh)).
Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Stacks `count` copies of x along a new leading axis.
Tensor repeat_leading(const Tensor& x, std::size_t count);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis);

/// Divides each slice along the trailing axis by its sum. Throws NumericalError when a slice
/// sums below 1e-12.
Tensor normalize_last(const Tensor& x);

/// Mean over rows of -sum_k target[b,k] * log_softmax(logits)[b,k]. Targets are soft labels.
Tensor cross_entropy(const Tensor& logits, const Tensor& targets);

/// [B,C,H,W] -> [B, (H/p)*(W/p), C*p*p]; tokens row-major over the patch grid, features
/// ordered (channel, dy, dx).
Tensor patchify(const Tensor& x, std::size_t patch);

}  // namespace mvit::ops
