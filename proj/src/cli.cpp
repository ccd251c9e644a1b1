#include "adpgcn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "adpgcn/checkpoint.hpp"
#include "adpgcn/config.hpp"
#include "adpgcn/data.hpp"
#include "adpgcn/errors.hpp"
#include "adpgcn/evaluation.hpp"
#include "adpgcn/forecaster.hpp"
#include "adpgcn/training.hpp"

namespace adpgcn::cli {

namespace fs = std::filesystem;

namespace {

/// Model, training and data settings resolved from defaults, an optional
/// config file, the seed environment variable and flags (flags win).
struct Settings {
  ModelConfig model;
  TrainConfig train;
  std::string data_path;
  std::string target;
  bool n_nodes_set = false;
};

struct Override {
  std::string key;  // section.key
  CLI::Option* option = nullptr;
  std::string value;
};

/// Flags and config plumbing shared by subcommands that build a model.
struct SettingsOptions {
  std::string config_path;
  std::deque<Override> overrides;
  std::vector<std::string> sets;
  std::string seed;
  CLI::Option* seed_opt = nullptr;

  void attach(CLI::App* app, bool with_data) {
    app->add_option("--config", config_path, "key = value settings file with [model] [train] [data] sections");
    app->add_option("--set", sets, "section.key=value override, repeatable");
    seed_opt = app->add_option("--seed", seed, "seed for model init and training (ADPGCN_SEED fallback)");
    if (with_data) {
      add(app, "--data", "data.path", "input CSV with a timestamp first column");
      add(app, "--target", "data.target", "column moved last");
    }
    add(app, "--seq-len", "model.seq_len", "encoder input length");
    add(app, "--label-len", "model.label_len", "known decoder prefix length (0 = auto)");
    add(app, "--pred-len", "model.pred_len", "forecast horizon");
    add(app, "--d-model", "model.d_model", "attention width");
    add(app, "--n-heads", "model.n_heads", "attention heads");
    add(app, "--d-ff", "model.d_ff", "feed-forward width");
    add(app, "--dropout", "model.dropout", "dropout probability");
    add(app, "--use-gcn", "model.use_gcn", "true or false");
    add(app, "--gcn-hidden", "model.gcn_hidden", "graph-conv hidden channels");
    add(app, "--gcn-order", "model.gcn_order", "diffusion order K");
    add(app, "--gcn-embed-dim", "model.gcn_embed_dim", "node embedding width");
    add(app, "--gcn-depth", "model.gcn_depth", "graph-conv layers per block");
    add(app, "--lr", "train.lr0", "initial learning rate");
    add(app, "--epochs", "train.epochs", "maximum epochs");
    add(app, "--patience", "train.patience", "early-stopping patience");
    add(app, "--batch-size", "train.batch_size", "mini-batch size");
    add(app, "--grad-clip", "train.grad_clip", "max gradient norm, 0 disables");
  }

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& o = overrides.emplace_back();
    o.key = key;
    o.option = app->add_option(flag, o.value, help);
  }
};

void apply_setting(Settings& s, const std::string& full, const std::string& value, bool& model_seed,
                   bool& train_seed) {
  const auto dot = full.find('.');
  if (dot == std::string::npos) throw ConfigError(full, "expected section.key");
  const std::string section = full.substr(0, dot);
  const std::string key = full.substr(dot + 1);
  bool known = false;
  if (section == "model") {
    known = apply_key(s.model, key, value);
    if (key == "n_nodes") s.n_nodes_set = true;
    if (key == "seed") model_seed = true;
  } else if (section == "train") {
    known = apply_key(s.train, key, value);
    if (key == "seed") train_seed = true;
  } else if (section == "data") {
    known = key == "path" || key == "target";
    if (key == "path") s.data_path = value;
    if (key == "target") s.target = value;
  }
  if (!known) throw ConfigError(full, "unknown setting");
}

Settings resolve(const SettingsOptions& o) {
  Settings s;
  bool model_seed = false, train_seed = false;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw DataError("cannot open config file " + o.config_path);
    for (const auto& [k, v] : parse_key_value_text(in)) apply_setting(s, k, v, model_seed, train_seed);
  }
  std::string seed_text = o.seed;
  if (!o.seed_opt->count()) {
    if (const char* env = std::getenv("ADPGCN_SEED"); env && *env) seed_text = env;
  }
  if (!seed_text.empty()) {
    const bool from_flag = o.seed_opt->count() > 0;
    const auto seed = parse_uint(from_flag ? "seed" : "ADPGCN_SEED", seed_text);
    if (from_flag || !model_seed) s.model.seed = seed;
    if (from_flag || !train_seed) s.train.seed = seed;
  }
  for (const auto& ov : o.overrides)
    if (ov.option->count()) apply_setting(s, ov.key, ov.value, model_seed, train_seed);
  for (const auto& item : o.sets) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError(item, "expected section.key=value");
    apply_setting(s, item.substr(0, eq), item.substr(eq + 1), model_seed, train_seed);
  }
  s.model = s.model.resolved();
  s.model.validate();
  s.train.validate();
  return s;
}

data::RawSeries load_data(Settings& s) {
  if (s.data_path.empty()) throw ConfigError("data", "no input CSV given (--data)");
  auto raw = data::ingest_csv(s.data_path, s.target);
  if (s.n_nodes_set && s.model.n_nodes != raw.dims())
    throw ConfigMismatch("n_nodes", "set to " + std::to_string(s.model.n_nodes) + " but " +
                                        s.data_path + " has " + std::to_string(raw.dims()) +
                                        " series columns");
  s.model.n_nodes = raw.dims();
  s.model.validate();
  return raw;
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_uint(key, item));
  if (out.empty()) throw ConfigError(key, "empty list");
  for (auto v : out)
    if (v == 0) throw ConfigError(key, "values must be positive");
  return out;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

std::string dataset_id(const std::string& path) { return fs::path(path).stem().string(); }

void write_resolved(const fs::path& path, const Settings& s) {
  KeyValues kv = to_key_values(s.model);
  kv.merge(to_key_values(s.train));
  kv["data.path"] = s.data_path;
  if (!s.target.empty()) kv["data.target"] = s.target;
  auto out = open_out(path);
  write_key_value_text(out, kv);
}

int cmd_synth(const std::vector<std::string>& couples, std::size_t n, std::size_t t, double noise,
              double ar, const std::string& seed_flag, bool seed_given, const std::string& out_path,
              std::string couplings_path, std::ostream& out) {
  data::SynthSpec spec;
  spec.n_nodes = n;
  spec.length = t;
  spec.noise_std = noise;
  spec.ar_coefficient = ar;
  std::string seed_text = seed_flag;
  if (!seed_given)
    if (const char* env = std::getenv("ADPGCN_SEED"); env && *env) seed_text = env;
  if (!seed_text.empty()) spec.seed = parse_uint(seed_given ? "seed" : "ADPGCN_SEED", seed_text);
  for (const auto& c : couples) spec.couplings.push_back(data::parse_coupling(c));
  const auto synth = data::synthesize_coupled(spec);
  if (couplings_path.empty()) {
    fs::path p(out_path);
    couplings_path = (p.parent_path() / (p.stem().string() + "_couplings.csv")).string();
  }
  if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
  data::write_csv(out_path, synth.series);
  data::write_couplings_csv(couplings_path, synth.couplings);
  out << "wrote " << out_path << " (" << spec.length << " rows, " << spec.n_nodes << " series) and "
      << couplings_path << '\n';
  return kOk;
}

int cmd_train(const SettingsOptions& opts, const std::string& out_dir, std::ostream& out,
              std::ostream& err) {
  Settings s = resolve(opts);
  const auto raw = load_data(s);
  const auto ds = eval::prepare_dataset(raw, s.model, dataset_id(s.data_path));
  model::Forecaster model(s.model);
  err << "training " << model.parameter_count() << " parameters on " << ds.train.size()
      << " windows (val " << ds.val.size() << ", test " << ds.test.size() << ")\n";
  auto result = train::train(model, ds.train, ds.val, s.train, ds.stats, ds.column_names,
                             [&](const EpochRecord& r) {
                               err << "epoch " << r.epoch << " lr " << r.lr << " train "
                                   << r.train_loss << " val " << r.val_loss
                                   << (r.improved ? " *" : "") << '\n';
                             });
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  save_checkpoint(result.best, dir / "checkpoint.bin");
  {
    auto h = open_out(dir / "history.csv");
    h << "epoch,lr,train_loss,val_loss,improved\n";
    for (const auto& r : result.history)
      h << r.epoch << ',' << format_double(r.lr) << ',' << format_double(r.train_loss) << ','
        << format_double(r.val_loss) << ',' << (r.improved ? 1 : 0) << '\n';
  }
  write_resolved(dir / "config.resolved", s);
  const auto test = eval::evaluate(model, ds.test, s.train.batch_size);
  out << "test mse " << format_double(test.normalized.mse) << " mae "
      << format_double(test.normalized.mae) << '\n';
  out << "wrote " << (dir / "checkpoint.bin").string() << ", history.csv, config.resolved\n";
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, std::string data_path, std::string target,
             const std::string& horizons_text, bool denormalized, bool target_only,
             const std::string& out_path, std::ostream& out) {
  const auto ckpt = load_checkpoint(ckpt_path);
  if (data_path.empty()) throw ConfigError("data", "no input CSV given (--data)");
  if (target.empty() && !ckpt.column_names.empty()) target = ckpt.column_names.back();
  const auto raw = data::ingest_csv(data_path, target);
  if (!ckpt.column_names.empty() && raw.column_names != ckpt.column_names)
    throw ConfigMismatch("columns", "data columns differ from the checkpoint's");
  if (raw.dims() != ckpt.model.n_nodes)
    throw ConfigMismatch("n_nodes", "checkpoint expects " + std::to_string(ckpt.model.n_nodes) +
                                        " series, data has " + std::to_string(raw.dims()));
  const auto& cfg = ckpt.model;
  std::vector<std::size_t> horizons{cfg.pred_len};
  if (!horizons_text.empty()) horizons = parse_size_list("horizons", horizons_text);
  for (auto h : horizons)
    if (h > cfg.pred_len)
      throw ConfigError("horizons", "horizon " + std::to_string(h) + " exceeds the checkpoint's pred_len " +
                                        std::to_string(cfg.pred_len));

  const auto normalized = data::normalize(raw, ckpt.norm);
  const auto splits = data::chronological_split(normalized, {0.7, 0.1, 0.2}, cfg.seq_len + cfg.pred_len);
  const auto test = data::make_windows(splits.test, cfg);
  auto model = build_model(ckpt);
  const std::string variant = cfg.use_gcn ? "adaptive" : "baseline";
  const std::size_t batch = ckpt.train.batch_size;
  std::vector<eval::EvalReport> reports;
  for (auto h : horizons) {
    const auto r = eval::evaluate(model, test, batch, denormalized ? &ckpt.norm : nullptr, h);
    const auto& m = target_only ? r.target : r.normalized;
    reports.push_back({dataset_id(data_path), h, target_only ? variant + "-target" : variant,
                       {{cfg.seed, m.mse, m.mae, r.seconds}}});
    out << "horizon " << h << (target_only ? " target" : "") << " mse " << format_double(m.mse)
        << " mae " << format_double(m.mae);
    if (r.denormalized) {
      reports.push_back({dataset_id(data_path), h, variant + "-denormalized",
                         {{cfg.seed, r.denormalized->mse, r.denormalized->mae, r.seconds}}});
      out << " (denormalized mse " << format_double(r.denormalized->mse) << " mae "
          << format_double(r.denormalized->mae) << ")";
    }
    out << '\n';
  }
  auto f = open_out(out_path);
  eval::write_report_csv(f, reports);
  out << "wrote " << out_path << '\n';
  return kOk;
}

int cmd_ablate(const SettingsOptions& opts, const std::string& seeds_text,
               const std::string& horizons_text, bool control, const std::string& out_dir,
               std::ostream& out, std::ostream& err) {
  Settings s = resolve(opts);
  const auto raw = load_data(s);
  std::vector<std::uint64_t> seeds;
  for (auto v : parse_size_list("seeds", seeds_text)) seeds.push_back(v);
  std::vector<std::size_t> horizons{s.model.pred_len};
  if (!horizons_text.empty()) horizons = parse_size_list("horizons", horizons_text);

  std::vector<eval::EvalReport> reports;
  std::vector<eval::AblationResult> results;
  for (auto h : horizons) {
    ModelConfig mc = s.model;
    mc.pred_len = h;
    mc.validate();
    const auto ds = eval::prepare_dataset(raw, mc, dataset_id(s.data_path));
    auto res = eval::ablation_compare(ds, mc, s.train, seeds,
                                      [&](const std::string& variant, const eval::RunRecord& r) {
                                        err << "horizon " << h << ' ' << variant << " seed " << r.seed
                                            << " mse " << r.mse << " mae " << r.mae << " ("
                                            << r.seconds << " s)\n";
                                      },
                                      control);
    reports.push_back(res.adaptive);
    reports.push_back(res.baseline);
    results.push_back(std::move(res));
  }
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  {
    auto f = open_out(dir / "runs.csv");
    eval::write_report_csv(f, reports);
  }
  auto f = open_out(dir / "summary.csv");
  f << "dataset,horizon,runs,adaptive_mse,baseline_mse,mse_improvement,adaptive_mae,baseline_mae,"
       "mae_improvement\n";
  for (const auto& r : results) {
    f << r.adaptive.dataset << ',' << r.adaptive.horizon << ',' << r.adaptive.run_count() << ','
      << format_double(r.adaptive.mean_mse()) << ',' << format_double(r.baseline.mean_mse()) << ','
      << format_double(r.mse_improvement) << ',' << format_double(r.adaptive.mean_mae()) << ','
      << format_double(r.baseline.mean_mae()) << ',' << format_double(r.mae_improvement) << '\n';
    out << "horizon " << r.adaptive.horizon << ": " << r.adaptive.variant << " mse "
        << format_double(r.adaptive.mean_mse()) << " vs baseline " << format_double(r.baseline.mean_mse())
        << " (" << format_double(r.mse_improvement) << "% improvement)\n";
  }
  out << "wrote " << (dir / "runs.csv").string() << " and summary.csv\n";
  return kOk;
}

int cmd_export_adjacency(const std::string& ckpt_path, const std::string& out_path,
                         const std::string& couplings_path, std::string report_path, std::ostream& out) {
  const auto ckpt = load_checkpoint(ckpt_path);
  if (!ckpt.model.use_gcn) throw ConfigError("use_gcn", "checkpoint was trained without the adaptive adjacency");
  const auto model = build_model(ckpt);
  const Tensor adj = *model.learned_adjacency();
  const std::size_t n = adj.size(0);
  std::vector<std::string> names = ckpt.column_names;
  if (names.size() != n) {
    names.clear();
    for (std::size_t i = 0; i < n; ++i) names.push_back("x" + std::to_string(i));
  }
  const auto a = adj.data();
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += a[i * n + j];
    if (!(std::abs(sum - 1.0) <= 1e-9))
      throw NonFiniteValue("adjacency row " + std::to_string(i) + " sums to " + format_double(sum));
  }
  {
    auto f = open_out(out_path);
    for (std::size_t j = 0; j < n; ++j) f << (j ? "," : "") << names[j];
    f << '\n';
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) f << (j ? "," : "") << format_double(a[i * n + j]);
      f << '\n';
    }
  }
  out << "wrote " << out_path << " (" << n << "x" << n << ")\n";
  if (couplings_path.empty()) return kOk;

  const auto couplings = data::read_couplings_csv(couplings_path);
  data::validate_couplings(couplings, n);
  if (report_path.empty()) {
    fs::path p(out_path);
    report_path = (p.parent_path() / (p.stem().string() + "_ranks.csv")).string();
  }
  auto f = open_out(report_path);
  f << "src,dst,lag,weight,entry,rank,row_size\n";
  for (const auto& c : couplings) {
    const double entry = a[c.dst * n + c.src];
    std::size_t rank = 1;
    for (std::size_t j = 0; j < n; ++j)
      if (a[c.dst * n + j] > entry) ++rank;
    f << c.src << ',' << c.dst << ',' << c.lag << ',' << format_double(c.weight) << ','
      << format_double(entry) << ',' << rank << ',' << n << '\n';
    out << "coupling " << names[c.src] << " -> " << names[c.dst] << ": entry (" << c.dst << ','
        << c.src << ") = " << format_double(entry) << ", rank " << rank << " of " << n << '\n';
  }
  out << "wrote " << report_path << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adaptive graph-convolution forecaster"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "write a synthetic coupled dataset and its coupling sidecar");
  std::size_t synth_n = 6, synth_t = 5000;
  double synth_noise = 0.1, synth_ar = 0.5;
  std::vector<std::string> synth_couples;
  std::string synth_seed, synth_out, synth_couplings;
  synth->add_option("--n", synth_n, "number of series");
  synth->add_option("--t", synth_t, "number of rows");
  synth->add_option("--couple", synth_couples, "src:dst:lag:weight, repeatable");
  synth->add_option("--noise", synth_noise, "innovation standard deviation");
  synth->add_option("--ar", synth_ar, "autoregressive coefficient");
  auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "generator seed (ADPGCN_SEED fallback)");
  synth->add_option("--out", synth_out, "output CSV")->required();
  synth->add_option("--couplings-out", synth_couplings, "coupling sidecar CSV");

  auto* train_cmd = app.add_subcommand("train", "train a forecaster and write checkpoint.bin, history.csv, config.resolved");
  SettingsOptions train_opts;
  train_opts.attach(train_cmd, true);
  std::string train_out = "run";
  train_cmd->add_option("--out-dir", train_out, "output directory");

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the test split");
  std::string eval_ckpt, eval_data, eval_target, eval_horizons, eval_out = "eval.csv";
  bool eval_denorm = false, eval_target_only = false;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "input CSV");
  eval_cmd->add_option("--target", eval_target, "column moved last");
  eval_cmd->add_option("--horizons", eval_horizons, "comma-separated leading horizons to score");
  eval_cmd->add_flag("--denormalized", eval_denorm, "also report metrics on the original scale");
  eval_cmd->add_flag("--target-only", eval_target_only, "score only the target (last) column");
  eval_cmd->add_option("--out", eval_out, "report CSV");

  auto* ablate = app.add_subcommand("ablate", "train with and without the adaptive GCN over several seeds");
  SettingsOptions ablate_opts;
  ablate_opts.attach(ablate, true);
  std::string ablate_seeds = "1,2,3", ablate_horizons, ablate_out = "ablate";
  bool ablate_control = false;
  ablate->add_option("--seeds", ablate_seeds, "comma-separated seeds (at least 3)");
  ablate->add_option("--horizons", ablate_horizons, "comma-separated horizons, e.g. 24,48,168,336");
  ablate->add_flag("--control", ablate_control, "run both variants without the GCN");
  ablate->add_option("--out-dir", ablate_out, "output directory");

  auto* export_cmd = app.add_subcommand("export-adjacency", "write the learned adjacency as CSV");
  std::string exp_ckpt, exp_out = "adjacency.csv", exp_couplings, exp_report;
  export_cmd->add_option("--checkpoint", exp_ckpt, "checkpoint file")->required();
  export_cmd->add_option("--out", exp_out, "adjacency CSV");
  export_cmd->add_option("--couplings", exp_couplings, "ground-truth coupling CSV for the rank report");
  export_cmd->add_option("--report", exp_report, "rank report CSV");

  const bool known = !args.empty() && (app.get_subcommand_no_throw(args.front()) != nullptr ||
                                        args.front() == "--help" || args.front() == "-h");
  if (!known) {
    err << (args.empty() ? "missing subcommand" : "unknown subcommand '" + args.front() + "'") << "\n"
        << app.help();
    return kUsage;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*synth)
      return cmd_synth(synth_couples, synth_n, synth_t, synth_noise, synth_ar, synth_seed,
                       synth_seed_opt->count() > 0, synth_out, synth_couplings, out);
    if (*train_cmd) return cmd_train(train_opts, train_out, out, err);
    if (*eval_cmd)
      return cmd_eval(eval_ckpt, eval_data, eval_target, eval_horizons, eval_denorm, eval_target_only,
                      eval_out, out);
    if (*ablate)
      return cmd_ablate(ablate_opts, ablate_seeds, ablate_horizons, ablate_control, ablate_out, out, err);
    if (*export_cmd) return cmd_export_adjacency(exp_ckpt, exp_out, exp_couplings, exp_report, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ShapeMismatch& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const Error& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  }
  return kUsage;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace adpgcn::cli
