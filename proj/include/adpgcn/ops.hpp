#pragma once

#include <cstddef>
#include <vector>

#include "adpgcn/rng.hpp"
#include "adpgcn/tensor.hpp"

namespace adpgcn::ops {

// Linear algebra.
/// [m×k]·[k×n] -> [m×n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., k]·w[k, n] (+ bias[n]) -> [..., n].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});
/// Batched product [B, m, k]·[B, k, n]; with transpose_b, b is [B, n, k].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// Left-multiplies every node block of x[..., N, C] by adjacency[N, N].
Tensor node_mix(const Tensor& adjacency, const Tensor& x);
Tensor transpose(const Tensor& x);  // 2-D
Tensor swap_axes(const Tensor& x, std::size_t a, std::size_t b);

// Elementwise. `b` may also match a trailing suffix of a's shape, in which
// case it is broadcast over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis);

// Shape.
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

// Normalization / probability.
/// Row softmax of a 2-D tensor with max subtraction.
Tensor softmax_rows(const Tensor& x);
/// Softmax over the last axis. With `causal`, the last two axes form a
/// [L_q, L_k] score block and key j > query i is masked out.
Tensor softmax_last(const Tensor& x, bool causal = false);
/// Normalizes the last axis to zero mean / unit variance, then gamma·x̂+beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Sequence ops.
/// Max pooling with window 2, stride 2 along axis 1 of [B, L, D]; odd tails dropped.
Tensor max_pool_half(const Tensor& x);
/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng);

/// Mean squared error over all elements, as a scalar.
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

}  // namespace adpgcn::ops
