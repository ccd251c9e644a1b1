#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>

namespace adpgcn {

struct GcnConfig {
  std::size_t hidden = 16;    // h: hidden channels per node
  std::size_t order = 2;      // K: diffusion depth
  std::size_t embed_dim = 10; // c: node-embedding width
  std::size_t depth = 2;      // stacked graph-conv layers per block
};

/// Architecture hyperparameters of the forecaster.
struct ModelConfig {
  std::size_t n_nodes = 7;
  std::size_t seq_len = 96;
  std::size_t label_len = 0;  // 0 resolves to 48 when seq_len >= 96, else seq_len / 2
  std::size_t pred_len = 24;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t enc_layers_main = 3;
  std::size_t enc_layers_aux = 1;
  std::size_t dec_layers = 2;
  std::size_t time_features = 4;
  double dropout = 0.05;
  std::string attention = "full";
  bool use_gcn = true;
  GcnConfig gcn;
  std::uint64_t seed = 1;

  /// Fills derived defaults (label_len).
  ModelConfig resolved() const;
  /// Throws ConfigError naming the first offending key.
  void validate() const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Optimization protocol: Adam from lr0, halved every epoch, early stopping.
struct TrainConfig {
  double lr0 = 1e-4;
  std::size_t epochs = 6;
  std::size_t patience = 3;
  std::size_t batch_size = 32;
  AdamConfig adam;
  double grad_clip = 0.0;  // max global norm; 0 disables
  std::uint64_t seed = 1;

  void validate() const;
};

/// Flat `section.key -> value` view used by config files and checkpoints.
using KeyValues = std::map<std::string, std::string>;

KeyValues to_key_values(const ModelConfig& cfg);
KeyValues to_key_values(const TrainConfig& cfg);
/// Applies one key (without section prefix). Returns false for unknown keys;
/// throws ConfigError for unparsable values.
bool apply_key(ModelConfig& cfg, const std::string& key, const std::string& value);
bool apply_key(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Reads `key = value` lines grouped under `[section]` headers. `#` starts a
/// comment. Keys come back as `section.key`.
KeyValues parse_key_value_text(std::istream& in);
void write_key_value_text(std::ostream& out, const KeyValues& kv);

/// Shortest round-trip text form of a double.
std::string format_double(double v);
double parse_double(const std::string& key, const std::string& text);
std::uint64_t parse_uint(const std::string& key, const std::string& text);
bool parse_bool(const std::string& key, const std::string& text);

}  // namespace adpgcn
