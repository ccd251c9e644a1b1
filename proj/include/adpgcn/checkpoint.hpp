#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "adpgcn/config.hpp"
#include "adpgcn/data.hpp"
#include "adpgcn/forecaster.hpp"

namespace adpgcn {

/// One completed training epoch (1-based).
struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool improved = false;
};

/// Everything needed to rebuild a trained forecaster and reproduce its
/// predictions bit for bit.
///
/// On-disk layout (all integers little-endian):
///
///     magic        8 bytes  "ADPGCNCK"
///     version      u32      kCheckpointVersion
///     header_len   u64
///     header       header_len bytes of `key = value` text, sections
///                  [model] [train] [norm] [columns] [history] [rng]
///     count        u64      number of parameter records
///     record*      name_len u32, name bytes, dtype u8 (1 = f64),
///                  rank u32, extents u64 x rank, values f64 x numel
///     end          8 bytes  "ADPGCNED"
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  data::NormStats norm;
  std::vector<std::string> column_names;
  std::vector<EpochRecord> history;
  std::string shuffle_rng_state;
  std::string dropout_rng_state;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Deep copy of the model's parameters and config.
Checkpoint snapshot(model::Forecaster& model);
/// Copies tensors into the model by name; shapes and names must match.
void restore(model::Forecaster& model, const Checkpoint& ckpt);
/// Fresh forecaster holding the checkpoint's parameters.
model::Forecaster build_model(const Checkpoint& ckpt);

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace adpgcn
