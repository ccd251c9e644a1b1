#include "adpgcn/training.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>

#include "adpgcn/errors.hpp"
#include "adpgcn/ops.hpp"
#include "adpgcn/rng.hpp"

namespace adpgcn::train {

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> first,
                 std::span<double> second, std::size_t step, double lr, const AdamConfig& cfg) {
  if (grad.size() != param.size() || first.size() != param.size() || second.size() != param.size())
    throw ShapeMismatch("adam_update: parameter, grad and moment sizes differ");
  if (step == 0) throw ConfigError("step", "Adam step count is 1-based");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    first[i] = cfg.beta1 * first[i] + (1.0 - cfg.beta1) * grad[i];
    second[i] = cfg.beta2 * second[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double m_hat = first[i] / c1;
    const double v_hat = second[i] / c2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr, const AdamConfig& cfg) {
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.numel(), 0.0);
      state.second.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first.size() != params.size()) throw ShapeMismatch("adam_step: optimizer state does not match parameters");
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    const auto g = params[i].grad();
    adam_update(params[i].mutable_data(), g, state.first[i], state.second[i], state.step, lr, cfg);
  }
}

double learning_rate(double lr0, std::size_t epoch) {
  return std::ldexp(lr0, -static_cast<int>(epoch));
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.has_grad())
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (double& g : p.node()->grad_buffer()) g *= s;
  }
  return norm;
}

bool EarlyStopping::observe(double loss) {
  ++seen_;
  if (loss < best_) {
    best_ = loss;
    best_epoch_ = seen_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

double evaluate_loss(model::Forecaster& model, const std::vector<data::WindowSample>& samples,
                     std::size_t batch_size) {
  if (samples.empty()) throw SeriesTooShort("no samples to evaluate");
  const bool was_training = model.training();
  model.set_training(false);
  NoGradGuard guard;
  double total = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < samples.size(); s += batch_size) {
    idx.resize(std::min(batch_size, samples.size() - s));
    std::iota(idx.begin(), idx.end(), s);
    const auto batch = data::make_batch(samples, idx);
    const Tensor pred = model.forward(batch);
    const auto p = pred.data();
    const auto y = batch.y.data();
    for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - y[i]) * (p[i] - y[i]);
    count += p.size();
  }
  model.set_training(was_training);
  return total / static_cast<double>(count);
}

TrainResult train(model::Forecaster& model, const std::vector<data::WindowSample>& train_set,
                  const std::vector<data::WindowSample>& val_set, const TrainConfig& cfg,
                  const data::NormStats& stats, const std::vector<std::string>& column_names,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw SeriesTooShort("training split yields no windows");
  if (val_set.empty()) throw SeriesTooShort("validation split yields no windows");

  std::vector<Tensor> params = model.parameters();
  AdamState adam;
  EarlyStopping stopper(cfg.patience);
  Rng shuffle_rng(derive_seed(cfg.seed, 3));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = learning_rate(cfg.lr0, epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    model.set_training(true);
    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size, ++batch_no) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(cfg.batch_size, order.size() - s));
      const auto batch = data::make_batch(train_set, idx);
      for (auto& p : params) p.zero_grad();
      double loss_value = 0.0;
      try {
        Tensor loss = ops::mse_loss(model.forward(batch), batch.y);
        loss_value = loss.item();
        loss.backward();
        if (cfg.grad_clip > 0.0) clip_grad_norm(params, cfg.grad_clip);
        adam_step(params, adam, lr, cfg.adam);
        for (const auto& p : params)
          for (double v : p.data())
            if (!std::isfinite(v)) throw NonFiniteValue("parameter update produced a non-finite value");
      } catch (const NonFiniteValue& e) {
        throw NonFiniteLoss(epoch + 1, batch_no + 1, e.what());
      }
      loss_sum += loss_value * static_cast<double>(idx.size());
    }
    model.set_training(false);

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_loss = evaluate_loss(model, val_set, cfg.batch_size);
    if (!std::isfinite(rec.val_loss)) throw NonFiniteLoss(epoch + 1, 0, "validation loss is not finite");
    rec.improved = stopper.observe(rec.val_loss);
    if (rec.improved) result.best = snapshot(model);
    result.history.push_back(rec);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epoch_seconds.push_back(secs);
    if (on_epoch) on_epoch(rec);
    if (stopper.should_stop() && epoch + 1 < cfg.epochs) {
      result.stopped_early = true;
      break;
    }
  }

  restore(model, result.best);
  result.best.train = cfg;
  result.best.norm = stats;
  result.best.column_names = column_names;
  result.best.history = result.history;
  result.best.shuffle_rng_state = shuffle_rng.state();
  return result;
}

}  // namespace adpgcn::train
