#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "adpgcn/rng.hpp"
#include "adpgcn/tensor.hpp"

namespace adpgcn::graph {

/// Learnable node-embedding pair whose product defines a dense,
/// row-stochastic dependency matrix softmax(relu(E1·E2ᵀ)).
struct AdaptiveAdjacency {
  Tensor source;  // E1, [N, c]
  Tensor target;  // E2, [N, c]

  /// Entries uniform on [-0.5, 0.5] / sqrt(c).
  static AdaptiveAdjacency random(std::size_t nodes, std::size_t embed_dim, Rng& rng);
  static AdaptiveAdjacency zeros(std::size_t nodes, std::size_t embed_dim);

  std::size_t nodes() const { return source.size(0); }
  std::size_t embed_dim() const { return source.size(1); }
};

/// softmax_rows(relu(E1·E2ᵀ)), differentiable w.r.t. both embeddings.
Tensor materialize_adjacency(const AdaptiveAdjacency& adj);

/// A + I.
Tensor with_self_loops(const Tensor& adjacency);
/// Row-normalized A + I: the default transition matrix for diffusion_conv.
Tensor transition_matrix(const Tensor& binary_adjacency);

/// Weights W_0..W_K of one diffusion / adaptive graph convolution.
struct GraphConvParams {
  std::vector<Tensor> weights;

  static GraphConvParams random(std::size_t in_channels, std::size_t out_channels,
                                std::size_t order, Rng& rng);
  std::size_t order() const { return weights.size() - 1; }
  std::size_t in_channels() const { return weights.front().size(0); }
  std::size_t out_channels() const { return weights.front().size(1); }
};

/// Z = Ã·X·W for X [N, D] (or [..., N, D]) and W [D, M].
Tensor gcn_layer(const Tensor& a_tilde, const Tensor& x, const Tensor& w);

/// Z = Σ_{k=0}^{K} P^k·X·W_k, with P^k·X built by repeated left products.
Tensor diffusion_conv(const Tensor& transition, const Tensor& x, const GraphConvParams& params);

/// diffusion_conv over the materialized adaptive adjacency. With K = 0 the
/// adjacency is never built, so no gradient reaches the embeddings.
Tensor adaptive_graph_conv(const AdaptiveAdjacency& adj, const Tensor& x,
                           const GraphConvParams& params);

struct GcnBlockParams {
  std::vector<GraphConvParams> layers;
  std::optional<Tensor> residual_projection;  // unused while channels stay 1 -> 1

  /// Channel plan 1 -> hidden -> ... -> 1 over `depth` layers of order K.
  static GcnBlockParams random(std::size_t hidden, std::size_t order, std::size_t depth, Rng& rng);
  std::vector<Tensor> parameters() const;
};

/// Mixes the N series at every time step of X [B, L, N] through the stacked
/// adaptive graph convolutions (ReLU between layers) and adds the input back.
Tensor gcn_block(const AdaptiveAdjacency& adj, const Tensor& x_seq, const GcnBlockParams& block);

}  // namespace adpgcn::graph
