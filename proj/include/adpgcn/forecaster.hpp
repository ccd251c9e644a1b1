#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adpgcn/config.hpp"
#include "adpgcn/data.hpp"
#include "adpgcn/graph_conv.hpp"
#include "adpgcn/rng.hpp"
#include "adpgcn/tensor.hpp"

namespace adpgcn::model {

struct AttentionParams {
  Tensor w_query, b_query, w_key, b_key, w_value, b_value, w_out, b_out;
};

struct LayerNormParams {
  Tensor gamma, beta;
};

struct FeedForwardParams {
  Tensor w_in, b_in, w_out, b_out;
};

struct EncoderLayerParams {
  AttentionParams attention;
  LayerNormParams norm1;
  FeedForwardParams ff;
  LayerNormParams norm2;
};

struct DecoderLayerParams {
  AttentionParams self_attention;
  LayerNormParams norm1;
  AttentionParams cross_attention;
  LayerNormParams norm2;
  FeedForwardParams ff;
  LayerNormParams norm3;
};

struct EmbeddingParams {
  Tensor w_value;  // [N, d_model], no bias
  Tensor w_time;   // [time_features, d_model], no bias
};

/// Sinusoidal position table [length, d_model].
Tensor positional_encoding(std::size_t length, std::size_t d_model);

/// value projection + positional encoding + calendar projection.
Tensor embed(const EmbeddingParams& params, const Tensor& x, const Tensor& marks);

/// softmax(QKᵀ/√d_head) per head, shape [B·heads, L_q, L_k].
Tensor attention_weights(const AttentionParams& p, const Tensor& query, const Tensor& key,
                         std::size_t n_heads, bool causal);

/// Scaled dot-product attention over `n_heads` heads, concatenated and
/// projected. Inputs are [B, L_q, d] and [B, L_k, d].
Tensor multi_head_attention(const AttentionParams& p, const Tensor& query, const Tensor& key,
                            const Tensor& value, std::size_t n_heads, bool causal);

/// Appends pred_len zero rows to the known decoder prefix along time.
Tensor assemble_decoder_input(const Tensor& x_dec_known, std::size_t pred_len);

/// Attention encoder-decoder forecaster with optional adaptive-GCN blocks on
/// the raw encoder and decoder inputs.
class Forecaster {
 public:
  /// Host parameters and GCN parameters draw from separate streams of
  /// config.seed, so toggling use_gcn leaves the host initialization intact.
  explicit Forecaster(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  Rng& dropout_rng() { return dropout_rng_; }

  Tensor encode(const Tensor& x_enc, const Tensor& marks_enc);
  /// Decoder outputs for all label_len + pred_len positions, [B, L_dec, N].
  Tensor decode_full(const Tensor& x_dec_known, const Tensor& marks_dec, const Tensor& enc_out);
  /// Last pred_len decoder positions, [B, pred_len, N].
  Tensor decode(const Tensor& x_dec_known, const Tensor& marks_dec, const Tensor& enc_out);
  Tensor forward(const data::ForecastBatch& batch);

  /// Every trainable tensor with a stable dotted name, in registration order.
  const std::vector<std::pair<std::string, Tensor>>& named_parameters() const { return params_; }
  std::vector<Tensor> parameters() const;
  std::optional<Tensor> find_parameter(const std::string& name) const;
  std::size_t parameter_count() const;

  bool has_gcn() const { return adjacency_.has_value(); }
  const graph::AdaptiveAdjacency& adjacency() const;
  const graph::GcnBlockParams& encoder_gcn() const { return *enc_gcn_; }
  const graph::GcnBlockParams& decoder_gcn() const { return *dec_gcn_; }
  /// Materialized adjacency, or nullopt without GCN.
  std::optional<Tensor> learned_adjacency() const;

  EmbeddingParams& encoder_embedding() { return enc_embed_; }
  EmbeddingParams& decoder_embedding() { return dec_embed_; }
  std::vector<EncoderLayerParams>& encoder_main() { return enc_main_; }
  std::vector<DecoderLayerParams>& decoder_layers() { return dec_layers_; }

 private:
  Tensor encoder_layer(const EncoderLayerParams& p, const Tensor& x);
  Tensor decoder_layer(const DecoderLayerParams& p, const Tensor& x, const Tensor& memory);
  Tensor feed_forward(const FeedForwardParams& p, const Tensor& x);
  Tensor drop(const Tensor& x);

  AttentionParams make_attention(const std::string& prefix, Rng& rng);
  LayerNormParams make_norm(const std::string& prefix);
  FeedForwardParams make_ff(const std::string& prefix, Rng& rng);
  Tensor add_param(const std::string& name, Tensor t);

  ModelConfig config_;
  bool training_ = false;
  Rng dropout_rng_;
  std::vector<std::pair<std::string, Tensor>> params_;

  EmbeddingParams enc_embed_, dec_embed_;
  std::vector<EncoderLayerParams> enc_main_, enc_aux_;
  LayerNormParams enc_main_norm_, enc_aux_norm_;
  std::vector<DecoderLayerParams> dec_layers_;
  LayerNormParams dec_norm_;
  Tensor w_proj_, b_proj_;

  std::optional<graph::AdaptiveAdjacency> adjacency_;
  std::optional<graph::GcnBlockParams> enc_gcn_, dec_gcn_;
};

}  // namespace adpgcn::model
