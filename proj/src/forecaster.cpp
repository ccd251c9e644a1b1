#include "adpgcn/forecaster.hpp"

#include <cmath>

#include "adpgcn/ops.hpp"

namespace adpgcn::model {

namespace {

Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(numel_of(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

double fan_in_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

void expect_shape(const Tensor& t, std::size_t len, std::size_t width, const char* what) {
  if (t.dim() != 3 || t.size(1) != len || t.size(2) != width)
    throw ShapeMismatch(std::string(what) + " must be [B, " + std::to_string(len) + ", " +
                        std::to_string(width) + "], got " + shape_str(t.shape()));
}

Tensor split_heads(const Tensor& t, std::size_t n_heads) {
  const std::size_t b = t.size(0), len = t.size(1), d = t.size(2);
  const std::size_t dh = d / n_heads;
  if (n_heads == 1) return ops::reshape(t, {b, len, d});
  return ops::reshape(ops::swap_axes(ops::reshape(t, {b, len, n_heads, dh}), 1, 2),
                      {b * n_heads, len, dh});
}

Tensor merge_heads(const Tensor& t, std::size_t batch, std::size_t n_heads) {
  const std::size_t len = t.size(1), dh = t.size(2);
  if (n_heads == 1) return t;
  return ops::reshape(ops::swap_axes(ops::reshape(t, {batch, n_heads, len, dh}), 1, 2),
                      {batch, len, n_heads * dh});
}

}  // namespace

Tensor positional_encoding(std::size_t length, std::size_t d_model) {
  std::vector<double> pe(length * d_model);
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < d_model; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d_model));
      const double angle = static_cast<double>(pos) * rate;
      pe[pos * d_model + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  return Tensor::from({length, d_model}, std::move(pe));
}

Tensor embed(const EmbeddingParams& params, const Tensor& x, const Tensor& marks) {
  if (x.dim() != 3 || marks.dim() != 3 || x.size(0) != marks.size(0) || x.size(1) != marks.size(1))
    throw ShapeMismatch("embed: values " + shape_str(x.shape()) + " and marks " +
                        shape_str(marks.shape()) + " must share [B, L]");
  const std::size_t d_model = params.w_value.size(1);
  Tensor values = ops::linear(x, params.w_value);
  Tensor with_pos = ops::add(values, positional_encoding(x.size(1), d_model));
  return ops::add(with_pos, ops::linear(marks, params.w_time));
}

Tensor attention_weights(const AttentionParams& p, const Tensor& query, const Tensor& key,
                         std::size_t n_heads, bool causal) {
  if (query.dim() != 3 || key.dim() != 3 || query.size(0) != key.size(0) ||
      query.size(2) != key.size(2))
    throw ShapeMismatch("attention: query " + shape_str(query.shape()) + " vs key " +
                        shape_str(key.shape()));
  const std::size_t d = query.size(2);
  if (n_heads == 0 || d % n_heads != 0) throw ShapeMismatch("n_heads must divide d_model");
  Tensor q = split_heads(ops::linear(query, p.w_query, p.b_query), n_heads);
  Tensor k = split_heads(ops::linear(key, p.w_key, p.b_key), n_heads);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d / n_heads));
  return ops::softmax_last(ops::scale(ops::bmm(q, k, true), inv_sqrt_dh), causal);
}

Tensor multi_head_attention(const AttentionParams& p, const Tensor& query, const Tensor& key,
                            const Tensor& value, std::size_t n_heads, bool causal) {
  if (value.shape() != key.shape())
    throw ShapeMismatch("attention: key " + shape_str(key.shape()) + " vs value " +
                        shape_str(value.shape()));
  Tensor weights = attention_weights(p, query, key, n_heads, causal);
  Tensor v = split_heads(ops::linear(value, p.w_value, p.b_value), n_heads);
  Tensor context = merge_heads(ops::bmm(weights, v), query.size(0), n_heads);
  return ops::linear(context, p.w_out, p.b_out);
}

Tensor assemble_decoder_input(const Tensor& x_dec_known, std::size_t pred_len) {
  if (x_dec_known.dim() != 3) throw ShapeMismatch("decoder prefix must be [B, label_len, N]");
  Tensor zeros = Tensor::zeros({x_dec_known.size(0), pred_len, x_dec_known.size(2)});
  return ops::concat({x_dec_known, zeros}, 1);
}

Forecaster::Forecaster(const ModelConfig& config)
    : config_(config.resolved()), dropout_rng_(derive_seed(config.seed, 2)) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const std::size_t n = config_.n_nodes;
  Rng host(derive_seed(config_.seed, 0));

  auto make_embedding = [&](const std::string& prefix) {
    EmbeddingParams e;
    e.w_value = add_param(prefix + ".value", uniform({n, d}, fan_in_bound(n), host));
    e.w_time = add_param(prefix + ".time",
                         uniform({config_.time_features, d}, fan_in_bound(config_.time_features), host));
    return e;
  };
  auto make_encoder_layer = [&](const std::string& prefix) {
    EncoderLayerParams l;
    l.attention = make_attention(prefix + ".attn", host);
    l.norm1 = make_norm(prefix + ".norm1");
    l.ff = make_ff(prefix + ".ff", host);
    l.norm2 = make_norm(prefix + ".norm2");
    return l;
  };

  enc_embed_ = make_embedding("enc.embed");
  for (std::size_t i = 0; i < config_.enc_layers_main; ++i)
    enc_main_.push_back(make_encoder_layer("enc.main." + std::to_string(i)));
  enc_main_norm_ = make_norm("enc.main.norm");
  for (std::size_t i = 0; i < config_.enc_layers_aux; ++i)
    enc_aux_.push_back(make_encoder_layer("enc.aux." + std::to_string(i)));
  if (config_.enc_layers_aux > 0) enc_aux_norm_ = make_norm("enc.aux.norm");

  dec_embed_ = make_embedding("dec.embed");
  for (std::size_t i = 0; i < config_.dec_layers; ++i) {
    const std::string prefix = "dec." + std::to_string(i);
    DecoderLayerParams l;
    l.self_attention = make_attention(prefix + ".self_attn", host);
    l.norm1 = make_norm(prefix + ".norm1");
    l.cross_attention = make_attention(prefix + ".cross_attn", host);
    l.norm2 = make_norm(prefix + ".norm2");
    l.ff = make_ff(prefix + ".ff", host);
    l.norm3 = make_norm(prefix + ".norm3");
    dec_layers_.push_back(std::move(l));
  }
  dec_norm_ = make_norm("dec.norm");
  w_proj_ = add_param("proj.weight", uniform({d, n}, fan_in_bound(d), host));
  b_proj_ = add_param("proj.bias", uniform({n}, fan_in_bound(d), host));

  if (config_.use_gcn) {
    Rng gcn_rng(derive_seed(config_.seed, 1));
    const auto& g = config_.gcn;
    auto adj = graph::AdaptiveAdjacency::random(n, g.embed_dim, gcn_rng);
    adj.source = add_param("gcn.adj.source", adj.source);
    adj.target = add_param("gcn.adj.target", adj.target);
    adjacency_ = std::move(adj);
    auto register_block = [&](graph::GcnBlockParams block, const std::string& prefix) {
      for (std::size_t l = 0; l < block.layers.size(); ++l)
        for (std::size_t k = 0; k < block.layers[l].weights.size(); ++k)
          add_param(prefix + "." + std::to_string(l) + ".w" + std::to_string(k),
                    block.layers[l].weights[k]);
      return block;
    };
    enc_gcn_ = register_block(graph::GcnBlockParams::random(g.hidden, g.order, g.depth, gcn_rng), "gcn.enc");
    dec_gcn_ = register_block(graph::GcnBlockParams::random(g.hidden, g.order, g.depth, gcn_rng), "gcn.dec");
  }
}

Tensor Forecaster::add_param(const std::string& name, Tensor t) {
  params_.emplace_back(name, t);
  return t;
}

AttentionParams Forecaster::make_attention(const std::string& prefix, Rng& rng) {
  const std::size_t d = config_.d_model;
  const double bound = fan_in_bound(d);
  AttentionParams a;
  a.w_query = add_param(prefix + ".wq", uniform({d, d}, bound, rng));
  a.b_query = add_param(prefix + ".bq", uniform({d}, bound, rng));
  a.w_key = add_param(prefix + ".wk", uniform({d, d}, bound, rng));
  a.b_key = add_param(prefix + ".bk", uniform({d}, bound, rng));
  a.w_value = add_param(prefix + ".wv", uniform({d, d}, bound, rng));
  a.b_value = add_param(prefix + ".bv", uniform({d}, bound, rng));
  a.w_out = add_param(prefix + ".wo", uniform({d, d}, bound, rng));
  a.b_out = add_param(prefix + ".bo", uniform({d}, bound, rng));
  return a;
}

LayerNormParams Forecaster::make_norm(const std::string& prefix) {
  const std::size_t d = config_.d_model;
  return {add_param(prefix + ".gamma", Tensor::full({d}, 1.0, true)),
          add_param(prefix + ".beta", Tensor::zeros({d}, true))};
}

FeedForwardParams Forecaster::make_ff(const std::string& prefix, Rng& rng) {
  const std::size_t d = config_.d_model, f = config_.d_ff;
  FeedForwardParams p;
  p.w_in = add_param(prefix + ".w_in", uniform({d, f}, fan_in_bound(d), rng));
  p.b_in = add_param(prefix + ".b_in", uniform({f}, fan_in_bound(d), rng));
  p.w_out = add_param(prefix + ".w_out", uniform({f, d}, fan_in_bound(f), rng));
  p.b_out = add_param(prefix + ".b_out", uniform({d}, fan_in_bound(f), rng));
  return p;
}

Tensor Forecaster::drop(const Tensor& x) {
  return training_ ? ops::dropout(x, config_.dropout, dropout_rng_) : x;
}

Tensor Forecaster::feed_forward(const FeedForwardParams& p, const Tensor& x) {
  return ops::linear(drop(ops::gelu(ops::linear(x, p.w_in, p.b_in))), p.w_out, p.b_out);
}

Tensor Forecaster::encoder_layer(const EncoderLayerParams& p, const Tensor& x) {
  const std::size_t h = config_.n_heads;
  Tensor attended = multi_head_attention(p.attention, x, x, x, h, false);
  Tensor y = ops::layer_norm(ops::add(x, drop(attended)), p.norm1.gamma, p.norm1.beta);
  return ops::layer_norm(ops::add(y, drop(feed_forward(p.ff, y))), p.norm2.gamma, p.norm2.beta);
}

Tensor Forecaster::decoder_layer(const DecoderLayerParams& p, const Tensor& x, const Tensor& memory) {
  const std::size_t h = config_.n_heads;
  Tensor y = ops::layer_norm(ops::add(x, drop(multi_head_attention(p.self_attention, x, x, x, h, true))),
                             p.norm1.gamma, p.norm1.beta);
  y = ops::layer_norm(
      ops::add(y, drop(multi_head_attention(p.cross_attention, y, memory, memory, h, false))),
      p.norm2.gamma, p.norm2.beta);
  return ops::layer_norm(ops::add(y, drop(feed_forward(p.ff, y))), p.norm3.gamma, p.norm3.beta);
}

Tensor Forecaster::encode(const Tensor& x_enc, const Tensor& marks_enc) {
  expect_shape(x_enc, config_.seq_len, config_.n_nodes, "encoder input");
  expect_shape(marks_enc, config_.seq_len, config_.time_features, "encoder marks");
  Tensor x = has_gcn() ? graph::gcn_block(*adjacency_, x_enc, *enc_gcn_) : x_enc;
  Tensor embedded = drop(embed(enc_embed_, x, marks_enc));

  // Main stack halves the length between layers.
  Tensor h = embedded;
  for (std::size_t i = 0; i < enc_main_.size(); ++i) {
    h = encoder_layer(enc_main_[i], h);
    if (i + 1 < enc_main_.size()) h = ops::max_pool_half(h);
  }
  h = ops::layer_norm(h, enc_main_norm_.gamma, enc_main_norm_.beta);
  if (enc_aux_.empty()) return h;

  // Auxiliary stack reads the most recent half and pools after every layer,
  // so with the default depths both stacks contribute seq_len / 4 positions.
  const std::size_t len = embedded.size(1);
  Tensor a = ops::slice(embedded, 1, len - len / 2, len / 2);
  for (const auto& layer : enc_aux_) a = ops::max_pool_half(encoder_layer(layer, a));
  a = ops::layer_norm(a, enc_aux_norm_.gamma, enc_aux_norm_.beta);
  return ops::concat({h, a}, 1);
}

Tensor Forecaster::decode_full(const Tensor& x_dec_known, const Tensor& marks_dec,
                               const Tensor& enc_out) {
  if (x_dec_known.dim() == 3 && x_dec_known.size(1) > config_.seq_len)
    throw LabelLongerThanInput("label_len", "decoder prefix is longer than the encoder input");
  expect_shape(x_dec_known, config_.label_len, config_.n_nodes, "decoder prefix");
  expect_shape(marks_dec, config_.label_len + config_.pred_len, config_.time_features, "decoder marks");
  if (enc_out.dim() != 3 || enc_out.size(0) != x_dec_known.size(0) || enc_out.size(2) != config_.d_model)
    throw ShapeMismatch("encoder output " + shape_str(enc_out.shape()) + " does not fit the decoder");

  Tensor x = assemble_decoder_input(x_dec_known, config_.pred_len);
  if (has_gcn()) x = graph::gcn_block(*adjacency_, x, *dec_gcn_);
  Tensor y = drop(embed(dec_embed_, x, marks_dec));
  for (const auto& layer : dec_layers_) y = decoder_layer(layer, y, enc_out);
  y = ops::layer_norm(y, dec_norm_.gamma, dec_norm_.beta);
  return ops::linear(y, w_proj_, b_proj_);
}

Tensor Forecaster::decode(const Tensor& x_dec_known, const Tensor& marks_dec, const Tensor& enc_out) {
  Tensor full = decode_full(x_dec_known, marks_dec, enc_out);
  return ops::slice(full, 1, config_.label_len, config_.pred_len);
}

Tensor Forecaster::forward(const data::ForecastBatch& batch) {
  return decode(batch.x_dec_known, batch.marks_dec, encode(batch.x_enc, batch.marks_enc));
}

std::vector<Tensor> Forecaster::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

std::optional<Tensor> Forecaster::find_parameter(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  return std::nullopt;
}

std::size_t Forecaster::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : params_) total += t.numel();
  return total;
}

const graph::AdaptiveAdjacency& Forecaster::adjacency() const {
  if (!adjacency_) throw Error("model was built without GCN blocks");
  return *adjacency_;
}

std::optional<Tensor> Forecaster::learned_adjacency() const {
  if (!adjacency_) return std::nullopt;
  NoGradGuard guard;
  return graph::materialize_adjacency(*adjacency_);
}

}  // namespace adpgcn::model
