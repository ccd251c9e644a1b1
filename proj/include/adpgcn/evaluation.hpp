#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adpgcn/config.hpp"
#include "adpgcn/data.hpp"
#include "adpgcn/forecaster.hpp"
#include "adpgcn/tensor.hpp"

namespace adpgcn::eval {

/// Mean squared error over all elements.
double mse(std::span<const double> y, std::span<const double> y_hat);
/// Mean absolute error over all elements.
double mae(std::span<const double> y, std::span<const double> y_hat);
double mse(const Tensor& y, const Tensor& y_hat);
double mae(const Tensor& y, const Tensor& y_hat);

/// 100·(base − treated)/base.
double relative_improvement(double base, double treated);

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
};

struct EvalResult {
  Metrics normalized;
  Metrics target;  // normalized, last (target) column only
  std::optional<Metrics> denormalized;  // set when statistics are supplied
  std::size_t samples = 0;
  double seconds = 0.0;
};

/// Batched eval-mode forward over `samples`. A nonzero `horizon` scores only
/// the first `horizon` predicted steps. Throws ConfigMismatch when the samples
/// do not fit the model's N, seq_len or pred_len.
EvalResult evaluate(model::Forecaster& model, const std::vector<data::WindowSample>& samples,
                    std::size_t batch_size = 32, const data::NormStats* stats = nullptr,
                    std::size_t horizon = 0);

struct RunRecord {
  std::uint64_t seed = 0;
  double mse = 0.0;
  double mae = 0.0;
  double seconds = 0.0;
};

/// Repeated runs of one variant on one dataset and horizon.
struct EvalReport {
  std::string dataset;
  std::size_t horizon = 0;
  std::string variant;
  std::vector<RunRecord> runs;

  std::size_t run_count() const { return runs.size(); }
  std::vector<std::uint64_t> seeds() const;
  double mean_mse() const;
  double mean_mae() const;
  double total_seconds() const;
};

/// CSV header: dataset,horizon,variant,run,seed,mse,mae,seconds. One row per
/// run, then one row per report with run = "mean" and seed = run count.
void write_report_csv(std::ostream& out, const std::vector<EvalReport>& reports);

/// Normalized series cut into chronological splits and windowed per split.
struct Dataset {
  std::string id;
  data::NormStats stats;
  std::vector<std::string> column_names;
  std::vector<data::WindowSample> train, val, test;
};

Dataset prepare_dataset(const data::RawSeries& raw, const ModelConfig& config,
                        const std::string& id = "data",
                        std::array<double, 3> fractions = {0.7, 0.1, 0.2});

struct AblationResult {
  EvalReport adaptive;
  EvalReport baseline;
  double mse_improvement = 0.0;  // percent
  double mae_improvement = 0.0;
};

/// Notified after every finished training run.
using RunCallback = std::function<void(const std::string& variant, const RunRecord&)>;

/// Trains the adaptive and baseline variants for each seed from identical
/// host initializations and evaluates both on the test windows. With
/// `control` set both variants run without the GCN.
AblationResult ablation_compare(const Dataset& dataset, const ModelConfig& model,
                                const TrainConfig& train, const std::vector<std::uint64_t>& seeds,
                                const RunCallback& on_run = {}, bool control = false);

}  // namespace adpgcn::eval
