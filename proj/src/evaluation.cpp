#include "adpgcn/evaluation.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "adpgcn/errors.hpp"
#include "adpgcn/training.hpp"

namespace adpgcn::eval {

namespace {

void check_pair(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size())
    throw ShapeMismatch("metric inputs differ in size: " + std::to_string(y.size()) + " vs " +
                        std::to_string(y_hat.size()));
  if (y.empty()) throw ShapeMismatch("metric inputs are empty");
}

void check_fit(const model::Forecaster& model, const data::WindowSample& s) {
  const auto& cfg = model.config();
  if (s.x_enc.size(1) != cfg.n_nodes)
    throw ConfigMismatch("n_nodes", "model expects " + std::to_string(cfg.n_nodes) +
                                        " dimensions, data has " + std::to_string(s.x_enc.size(1)));
  if (s.x_enc.size(0) != cfg.seq_len)
    throw ConfigMismatch("seq_len", "model expects " + std::to_string(cfg.seq_len) +
                                        " input steps, data has " + std::to_string(s.x_enc.size(0)));
  if (s.y.size(0) != cfg.pred_len)
    throw ConfigMismatch("pred_len", "model expects " + std::to_string(cfg.pred_len) +
                                         " target steps, data has " + std::to_string(s.y.size(0)));
  if (s.x_dec_known.size(0) != cfg.label_len)
    throw ConfigMismatch("label_len", "model expects " + std::to_string(cfg.label_len) +
                                          " known decoder steps, data has " +
                                          std::to_string(s.x_dec_known.size(0)));
}

}  // namespace

double mse(std::span<const double> y, std::span<const double> y_hat) {
  check_pair(y, y_hat);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
  return s / static_cast<double>(y.size());
}

double mae(std::span<const double> y, std::span<const double> y_hat) {
  check_pair(y, y_hat);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - y_hat[i]);
  return s / static_cast<double>(y.size());
}

double mse(const Tensor& y, const Tensor& y_hat) {
  if (y.shape() != y_hat.shape())
    throw ShapeMismatch("mse: " + shape_str(y.shape()) + " vs " + shape_str(y_hat.shape()));
  return mse(y.data(), y_hat.data());
}

double mae(const Tensor& y, const Tensor& y_hat) {
  if (y.shape() != y_hat.shape())
    throw ShapeMismatch("mae: " + shape_str(y.shape()) + " vs " + shape_str(y_hat.shape()));
  return mae(y.data(), y_hat.data());
}

double relative_improvement(double base, double treated) { return 100.0 * (base - treated) / base; }

EvalResult evaluate(model::Forecaster& model, const std::vector<data::WindowSample>& samples,
                    std::size_t batch_size, const data::NormStats* stats, std::size_t horizon) {
  if (samples.empty()) throw SeriesTooShort("no windows to evaluate");
  if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
  check_fit(model, samples.front());
  const std::size_t n = model.config().n_nodes;
  if (stats && (stats->mean.size() != n || stats->std.size() != n))
    throw ConfigMismatch("norm", "normalization statistics do not match the model's dimensions");
  const std::size_t pred_len = model.config().pred_len;
  if (horizon == 0) horizon = pred_len;
  if (horizon > pred_len)
    throw ConfigError("horizons", "horizon " + std::to_string(horizon) + " exceeds pred_len " +
                                      std::to_string(pred_len));

  const auto t0 = std::chrono::steady_clock::now();
  const bool was_training = model.training();
  model.set_training(false);
  NoGradGuard guard;

  std::vector<double> y, y_hat;
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < samples.size(); s += batch_size) {
    idx.resize(std::min(batch_size, samples.size() - s));
    std::iota(idx.begin(), idx.end(), s);
    const auto batch = data::make_batch(samples, idx);
    const Tensor pred = model.forward(batch);
    const std::size_t keep = horizon * n;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto yb = batch.y.data().subspan(b * pred_len * n, keep);
      const auto pb = pred.data().subspan(b * pred_len * n, keep);
      y.insert(y.end(), yb.begin(), yb.end());
      y_hat.insert(y_hat.end(), pb.begin(), pb.end());
    }
  }
  model.set_training(was_training);

  EvalResult r;
  r.samples = samples.size();
  r.normalized = {mse(y, y_hat), mae(y, y_hat)};
  std::vector<double> ty, ty_hat;
  for (std::size_t i = n - 1; i < y.size(); i += n) {
    ty.push_back(y[i]);
    ty_hat.push_back(y_hat[i]);
  }
  r.target = {mse(ty, ty_hat), mae(ty, ty_hat)};
  if (stats) {
    for (std::size_t i = 0; i < y.size(); ++i) {
      const std::size_t c = i % n;
      y[i] = y[i] * stats->std[c] + stats->mean[c];
      y_hat[i] = y_hat[i] * stats->std[c] + stats->mean[c];
    }
    r.denormalized = Metrics{mse(y, y_hat), mae(y, y_hat)};
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<std::uint64_t> EvalReport::seeds() const {
  std::vector<std::uint64_t> out;
  for (const auto& r : runs) out.push_back(r.seed);
  return out;
}

double EvalReport::mean_mse() const {
  if (runs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : runs) s += r.mse;
  return s / static_cast<double>(runs.size());
}

double EvalReport::mean_mae() const {
  if (runs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : runs) s += r.mae;
  return s / static_cast<double>(runs.size());
}

double EvalReport::total_seconds() const {
  double s = 0.0;
  for (const auto& r : runs) s += r.seconds;
  return s;
}

void write_report_csv(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << "dataset,horizon,variant,run,seed,mse,mae,seconds\n";
  for (const auto& rep : reports) {
    for (std::size_t i = 0; i < rep.runs.size(); ++i) {
      const auto& r = rep.runs[i];
      out << rep.dataset << ',' << rep.horizon << ',' << rep.variant << ',' << i + 1 << ','
          << r.seed << ',' << format_double(r.mse) << ',' << format_double(r.mae) << ','
          << format_double(r.seconds) << '\n';
    }
  }
  for (const auto& rep : reports)
    out << rep.dataset << ',' << rep.horizon << ',' << rep.variant << ",mean," << rep.run_count()
        << ',' << format_double(rep.mean_mse()) << ',' << format_double(rep.mean_mae()) << ','
        << format_double(rep.total_seconds()) << '\n';
}

Dataset prepare_dataset(const data::RawSeries& raw, const ModelConfig& config,
                        const std::string& id, std::array<double, 3> fractions) {
  const ModelConfig cfg = config.resolved();
  if (raw.dims() != cfg.n_nodes)
    throw ConfigMismatch("n_nodes", "config has " + std::to_string(cfg.n_nodes) +
                                        " dimensions, data has " + std::to_string(raw.dims()));
  auto [normalized, stats] = data::fit_normalize(raw, fractions[0]);
  const auto splits = data::chronological_split(normalized, fractions, cfg.seq_len + cfg.pred_len);
  Dataset d;
  d.id = id;
  d.stats = std::move(stats);
  d.column_names = raw.column_names;
  d.train = data::make_windows(splits.train, cfg);
  d.val = data::make_windows(splits.val, cfg);
  d.test = data::make_windows(splits.test, cfg);
  return d;
}

AblationResult ablation_compare(const Dataset& dataset, const ModelConfig& model,
                                const TrainConfig& train, const std::vector<std::uint64_t>& seeds,
                                const RunCallback& on_run, bool control) {
  if (seeds.size() < 3) throw ConfigError("seeds", "ablation needs at least 3 seeds");
  AblationResult result;
  result.adaptive = {dataset.id, model.pred_len, control ? "control" : "adaptive", {}};
  result.baseline = {dataset.id, model.pred_len, "baseline", {}};
  for (const auto seed : seeds) {
    for (const bool adaptive : {true, false}) {
      ModelConfig mc = model;
      mc.seed = seed;
      mc.use_gcn = adaptive && !control;
      TrainConfig tc = train;
      tc.seed = seed;
      const auto t0 = std::chrono::steady_clock::now();
      model::Forecaster f(mc);
      train::train(f, dataset.train, dataset.val, tc, dataset.stats, dataset.column_names);
      const auto m = evaluate(f, dataset.test, tc.batch_size).normalized;
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const RunRecord rec{seed, m.mse, m.mae, secs};
      auto& rep = adaptive ? result.adaptive : result.baseline;
      rep.runs.push_back(rec);
      if (on_run) on_run(rep.variant, rec);
    }
  }
  result.mse_improvement = relative_improvement(result.baseline.mean_mse(), result.adaptive.mean_mse());
  result.mae_improvement = relative_improvement(result.baseline.mean_mae(), result.adaptive.mean_mae());
  return result;
}

}  // namespace adpgcn::eval
