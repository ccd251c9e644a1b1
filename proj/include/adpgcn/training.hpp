#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "adpgcn/checkpoint.hpp"
#include "adpgcn/config.hpp"
#include "adpgcn/data.hpp"
#include "adpgcn/forecaster.hpp"

namespace adpgcn::train {

/// First and second moments per parameter plus the shared step count.
struct AdamState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of a flat parameter block. `step` is the
/// 1-based count after this update.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> first,
                 std::span<double> second, std::size_t step, double lr, const AdamConfig& cfg);

/// Adam over leaf tensors using their accumulated grads.
void adam_step(std::span<Tensor> params, AdamState& state, double lr, const AdamConfig& cfg);

/// lr0·2^(-epoch) for a 0-based epoch index.
double learning_rate(double lr0, std::size_t epoch);

/// Scales all grads so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

/// Stops after `patience` consecutive epochs without a new best loss.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records one epoch's validation loss; true when it is a new best.
  bool observe(double loss);
  bool should_stop() const { return stale_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 before any epoch
  double best_loss() const { return best_; }
  std::size_t epochs_seen() const { return seen_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::size_t seen_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

/// Mean squared error over every element of every sample, eval mode.
double evaluate_loss(model::Forecaster& model, const std::vector<data::WindowSample>& samples,
                     std::size_t batch_size);

struct TrainResult {
  Checkpoint best;  // parameters at the best validation epoch
  std::vector<EpochRecord> history;
  std::vector<double> epoch_seconds;
  bool stopped_early = false;
};

/// Trains with seeded shuffling, MSE loss, Adam and a halving learning rate,
/// keeping the best-validation parameters. On return the model holds the
/// best parameters. Throws NonFiniteLoss when a batch loss is not finite.
TrainResult train(model::Forecaster& model, const std::vector<data::WindowSample>& train_set,
                  const std::vector<data::WindowSample>& val_set, const TrainConfig& cfg,
                  const data::NormStats& stats = {},
                  const std::vector<std::string>& column_names = {},
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace adpgcn::train
