#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "adpgcn/config.hpp"
#include "adpgcn/tensor.hpp"

namespace adpgcn::data {

/// Seconds since 1970-01-01 00:00:00 (timestamps carry no zone).
using Timestamp = std::int64_t;

Timestamp parse_timestamp(const std::string& text);  // "YYYY-MM-DD HH:MM:SS"
std::string format_timestamp(Timestamp ts);

/// Calendar features month, day, weekday, hour, each scaled to [-0.5, 0.5].
constexpr std::size_t kTimeFeatures = 4;
std::array<double, kTimeFeatures> time_features(Timestamp ts);

/// Equally spaced multivariate series, one column per modeled dimension.
struct RawSeries {
  std::vector<Timestamp> timestamps;
  Tensor values;  // [T, N]
  std::vector<std::string> column_names;
  std::string time_column = "date";

  std::size_t rows() const { return timestamps.size(); }
  std::size_t dims() const { return column_names.size(); }
  double value(std::size_t row, std::size_t col) const { return values.data()[row * dims() + col]; }
  /// Rows [start, start + count) as a new series.
  RawSeries rows_slice(std::size_t start, std::size_t count) const;
};

/// Parses a header-first CSV whose first column is a timestamp. The target
/// column, when named, is moved last. Errors carry 1-based file line numbers.
RawSeries read_csv(std::istream& in, const std::string& target_column = "");
RawSeries ingest_csv(const std::filesystem::path& path, const std::string& target_column = "");
void write_csv(std::ostream& out, const RawSeries& series);
void write_csv(const std::filesystem::path& path, const RawSeries& series);

/// Per-column statistics from the training rows (population std).
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
};

NormStats fit_stats(const RawSeries& series, double train_fraction);
RawSeries normalize(const RawSeries& series, const NormStats& stats);
RawSeries denormalize(const RawSeries& series, const NormStats& stats);
/// Fits statistics on the first train_fraction of rows, applies them to all.
std::pair<RawSeries, NormStats> fit_normalize(const RawSeries& series, double train_fraction);

/// One (encoder input, known decoder prefix, target) triple.
struct WindowSample {
  Tensor x_enc;        // [seq_len, N]
  Tensor x_dec_known;  // [label_len, N], the tail of x_enc
  Tensor y;            // [pred_len, N], the rows right after x_enc
  Tensor marks_enc;    // [seq_len, 4]
  Tensor marks_dec;    // [label_len + pred_len, 4]
  std::size_t start = 0;  // first row of x_enc in the source series
};

std::size_t window_count(std::size_t rows, std::size_t seq_len, std::size_t pred_len,
                         std::size_t stride = 1);
std::vector<WindowSample> make_windows(const RawSeries& series, const ModelConfig& config,
                                       std::size_t stride = 1);

/// Samples stacked along a leading batch axis.
struct ForecastBatch {
  Tensor x_enc;        // [B, seq_len, N]
  Tensor marks_enc;    // [B, seq_len, 4]
  Tensor x_dec_known;  // [B, label_len, N]
  Tensor marks_dec;    // [B, label_len + pred_len, 4]
  Tensor y;            // [B, pred_len, N]
  std::size_t size() const { return x_enc.size(0); }
};

ForecastBatch make_batch(const std::vector<WindowSample>& samples,
                         std::span<const std::size_t> indices);
ForecastBatch make_batch(const std::vector<WindowSample>& samples);

struct Splits {
  RawSeries train, val, test;
};

/// Contiguous train/val/test segments. Train and test take floor(T·f) rows,
/// validation the remainder. Each segment must hold at least `min_rows`.
Splits chronological_split(const RawSeries& series,
                           std::array<double, 3> fractions = {0.7, 0.1, 0.2},
                           std::size_t min_rows = 1);

struct Coupling {
  std::size_t src = 0;
  std::size_t dst = 0;
  std::size_t lag = 1;
  double weight = 0.0;
  bool operator==(const Coupling&) const = default;
};

struct SynthSpec {
  std::size_t n_nodes = 6;
  std::size_t length = 5000;
  std::vector<Coupling> couplings;
  double noise_std = 0.1;
  double ar_coefficient = 0.5;
  std::uint64_t seed = 0;
  Timestamp start = 1467331200;  // 2016-07-01 00:00:00
  std::int64_t interval_seconds = 3600;
};

struct SyntheticSeries {
  RawSeries series;
  std::vector<Coupling> couplings;  // ground-truth dependency graph
};

/// x_d[t] = a·x_d[t-1] + Σ_{src→d} w·x_src[t-lag] + σ·ε, with x_d[0] ~ N(0, 1).
SyntheticSeries synthesize_coupled(const SynthSpec& spec);

/// Parses "src:dst:lag:weight".
Coupling parse_coupling(const std::string& text);
void validate_couplings(const std::vector<Coupling>& couplings, std::size_t n_nodes);
void write_couplings_csv(const std::filesystem::path& path, const std::vector<Coupling>& couplings);
std::vector<Coupling> read_couplings_csv(const std::filesystem::path& path);

}  // namespace adpgcn::data
