#include "adpgcn/graph_conv.hpp"

#include <cmath>

#include "adpgcn/ops.hpp"

namespace adpgcn::graph {

namespace {

Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(numel_of(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor convolve(const Tensor* transition, const AdaptiveAdjacency* adj, const Tensor& x,
                const GraphConvParams& params) {
  if (params.weights.empty()) throw ShapeMismatch("graph convolution needs at least W_0");
  for (const auto& w : params.weights)
    if (w.shape() != params.weights.front().shape())
      throw ShapeMismatch("all W_k must share one shape");
  if (x.dim() < 2) throw ShapeMismatch("graph convolution input must be [..., N, D]");

  Tensor z = ops::linear(x, params.weights[0]);
  if (params.order() == 0) return z;

  const Tensor p = transition ? *transition : materialize_adjacency(*adj);
  if (p.dim() != 2 || p.size(0) != p.size(1))
    throw ShapeMismatch("transition matrix must be square, got " + shape_str(p.shape()));
  Tensor propagated = x;
  for (std::size_t k = 1; k <= params.order(); ++k) {
    propagated = ops::node_mix(p, propagated);
    z = ops::add(z, ops::linear(propagated, params.weights[k]));
  }
  return z;
}

}  // namespace

AdaptiveAdjacency AdaptiveAdjacency::random(std::size_t nodes, std::size_t embed_dim, Rng& rng) {
  const double bound = 0.5 / std::sqrt(static_cast<double>(embed_dim));
  AdaptiveAdjacency adj;
  adj.source = uniform({nodes, embed_dim}, bound, rng);
  adj.target = uniform({nodes, embed_dim}, bound, rng);
  return adj;
}

AdaptiveAdjacency AdaptiveAdjacency::zeros(std::size_t nodes, std::size_t embed_dim) {
  return {Tensor::zeros({nodes, embed_dim}, true), Tensor::zeros({nodes, embed_dim}, true)};
}

Tensor materialize_adjacency(const AdaptiveAdjacency& adj) {
  if (adj.source.shape() != adj.target.shape() || adj.source.dim() != 2)
    throw ShapeMismatch("E1 " + shape_str(adj.source.shape()) + " and E2 " +
                        shape_str(adj.target.shape()) + " must both be [N, c]");
  return ops::softmax_rows(ops::relu(ops::matmul(adj.source, ops::transpose(adj.target))));
}

Tensor with_self_loops(const Tensor& adjacency) {
  if (adjacency.dim() != 2 || adjacency.size(0) != adjacency.size(1))
    throw ShapeMismatch("adjacency must be square, got " + shape_str(adjacency.shape()));
  const std::size_t n = adjacency.size(0);
  std::vector<double> eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  return ops::add(adjacency, Tensor::from({n, n}, std::move(eye)));
}

Tensor transition_matrix(const Tensor& binary_adjacency) {
  Tensor a = with_self_loops(binary_adjacency).detach();
  const std::size_t n = a.size(0);
  auto d = a.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += d[i * n + j];
    for (std::size_t j = 0; j < n; ++j) d[i * n + j] /= row;
  }
  return a;
}

GraphConvParams GraphConvParams::random(std::size_t in_channels, std::size_t out_channels,
                                        std::size_t order, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * (order + 1)));
  GraphConvParams params;
  for (std::size_t k = 0; k <= order; ++k)
    params.weights.push_back(uniform({in_channels, out_channels}, bound, rng));
  return params;
}

Tensor gcn_layer(const Tensor& a_tilde, const Tensor& x, const Tensor& w) {
  return ops::linear(ops::node_mix(a_tilde, x), w);
}

Tensor diffusion_conv(const Tensor& transition, const Tensor& x, const GraphConvParams& params) {
  return convolve(&transition, nullptr, x, params);
}

Tensor adaptive_graph_conv(const AdaptiveAdjacency& adj, const Tensor& x,
                           const GraphConvParams& params) {
  if (x.dim() >= 2 && x.size(x.dim() - 2) != adj.nodes())
    throw NodeCountMismatch("adjacency has " + std::to_string(adj.nodes()) + " nodes, input " +
                            shape_str(x.shape()));
  return convolve(nullptr, &adj, x, params);
}

GcnBlockParams GcnBlockParams::random(std::size_t hidden, std::size_t order, std::size_t depth,
                                      Rng& rng) {
  if (depth == 0) throw ConfigError("gcn.depth", "must be at least 1");
  GcnBlockParams block;
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t in = i == 0 ? 1 : hidden;
    const std::size_t out = i + 1 == depth ? 1 : hidden;
    block.layers.push_back(GraphConvParams::random(in, out, order, rng));
  }
  return block;
}

std::vector<Tensor> GcnBlockParams::parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : layers)
    for (const auto& w : layer.weights) out.push_back(w);
  if (residual_projection) out.push_back(*residual_projection);
  return out;
}

Tensor gcn_block(const AdaptiveAdjacency& adj, const Tensor& x_seq, const GcnBlockParams& block) {
  if (x_seq.dim() != 3) throw ShapeMismatch("gcn_block expects [B, L, N], got " + shape_str(x_seq.shape()));
  const std::size_t b = x_seq.size(0), len = x_seq.size(1), n = x_seq.size(2);
  if (n != adj.nodes())
    throw NodeCountMismatch("series has " + std::to_string(n) + " dimensions, adjacency " +
                            std::to_string(adj.nodes()));
  if (block.layers.empty()) throw ShapeMismatch("gcn_block has no layers");
  std::size_t channels = 1;
  for (const auto& layer : block.layers) {
    if (layer.in_channels() != channels)
      throw ShapeMismatch("gcn_block layer expects " + std::to_string(layer.in_channels()) +
                          " channels, previous layer gives " + std::to_string(channels));
    channels = layer.out_channels();
  }
  if (channels != 1 && !block.residual_projection)
    throw ShapeMismatch("gcn_block output channels must be 1 without a residual projection");

  // Nodes carry one channel; every (batch, time) pair is an independent graph.
  Tensor h = ops::reshape(x_seq, {b * len, n, 1});
  // Materialized once and shared by every propagating layer.
  bool propagates = false;
  for (const auto& layer : block.layers) propagates |= layer.order() > 0;
  const Tensor p = propagates ? materialize_adjacency(adj) : Tensor{};
  for (std::size_t i = 0; i < block.layers.size(); ++i) {
    const auto& layer = block.layers[i];
    h = layer.order() > 0 ? diffusion_conv(p, h, layer) : ops::linear(h, layer.weights[0]);
    if (i + 1 < block.layers.size()) h = ops::relu(h);
  }
  if (block.residual_projection) h = ops::linear(h, *block.residual_projection);
  return ops::add(x_seq, ops::reshape(h, {b, len, n}));
}

}  // namespace adpgcn::graph
