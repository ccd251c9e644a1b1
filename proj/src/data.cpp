#include "adpgcn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "adpgcn/rng.hpp"

namespace adpgcn::data {

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct Civil {
  std::int64_t year;
  unsigned month, day;
};

Civil civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {y + (m <= 2), m, d};
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  return a / b - ((a % b != 0) && ((a < 0) != (b < 0)));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string strip(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  return s.substr(b);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

Timestamp parse_timestamp(const std::string& text) {
  int y, mo, d, h, mi, s;
  char tail;
  if (std::sscanf(text.c_str(), "%4d-%2d-%2d %2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &s, &tail) != 6)
    throw DataError("timestamp '" + text + "' is not YYYY-MM-DD HH:MM:SS");
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 ||
      s > 59)
    throw DataError("timestamp '" + text + "' is out of range");
  const auto days = days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
  if (civil_from_days(days).day != static_cast<unsigned>(d))
    throw DataError("timestamp '" + text + "' names a nonexistent day");
  return days * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_timestamp(Timestamp ts) {
  const std::int64_t days = floor_div(ts, 86400);
  const std::int64_t secs = ts - days * 86400;
  const Civil c = civil_from_days(days);
  char buf[80];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02u %02lld:%02lld:%02lld",
                static_cast<long long>(c.year), c.month, c.day,
                static_cast<long long>(secs / 3600), static_cast<long long>(secs / 60 % 60),
                static_cast<long long>(secs % 60));
  return buf;
}

std::array<double, kTimeFeatures> time_features(Timestamp ts) {
  const std::int64_t days = floor_div(ts, 86400);
  const std::int64_t secs = ts - days * 86400;
  const Civil c = civil_from_days(days);
  // 1970-01-01 was a Thursday; Monday = 0.
  const std::int64_t weekday = ((days % 7) + 7 + 3) % 7;
  return {(static_cast<double>(c.month) - 1.0) / 11.0 - 0.5,
          (static_cast<double>(c.day) - 1.0) / 30.0 - 0.5,
          static_cast<double>(weekday) / 6.0 - 0.5,
          static_cast<double>(secs / 3600) / 23.0 - 0.5};
}

RawSeries RawSeries::rows_slice(std::size_t start, std::size_t count) const {
  if (start + count > rows() || count == 0) throw SeriesTooShort("row slice out of range");
  RawSeries out;
  out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(start),
                        timestamps.begin() + static_cast<std::ptrdiff_t>(start + count));
  const auto v = values.data();
  out.values = Tensor::from({count, dims()},
                            std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(start * dims()),
                                                v.begin() + static_cast<std::ptrdiff_t>((start + count) * dims())));
  out.column_names = column_names;
  out.time_column = time_column;
  return out;
}

RawSeries read_csv(std::istream& in, const std::string& target_column) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV input");
  auto header = split_csv_line(strip(line));
  for (auto& h : header) h = strip(h);
  if (header.size() < 2) throw ParseError(1, 0, "need a timestamp column and at least one series");

  const std::size_t n = header.size() - 1;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (!target_column.empty()) {
    auto it = std::find(header.begin() + 1, header.end(), target_column);
    if (it == header.end()) throw ConfigError("target", "column '" + target_column + "' not in header");
    const std::size_t t = static_cast<std::size_t>(it - header.begin()) - 1;
    order.erase(order.begin() + static_cast<std::ptrdiff_t>(t));
    order.push_back(t);
  }

  RawSeries series;
  series.time_column = header[0];
  for (auto i : order) series.column_names.push_back(header[i + 1]);
  std::vector<double> values;
  std::size_t lineno = 1;
  std::vector<double> row(n);
  while (std::getline(in, line)) {
    ++lineno;
    line = strip(line);
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() > header.size()) throw ParseError(lineno, header.size(), "too many cells");
    Timestamp ts;
    try {
      ts = parse_timestamp(strip(cells[0]));
    } catch (const DataError& e) {
      throw ParseError(lineno, 0, e.what());
    }
    for (std::size_t c = 0; c < n; ++c) {
      if (c + 1 >= cells.size()) throw MissingValue(lineno, c + 1);
      const std::string cell = strip(cells[c + 1]);
      if (cell.empty()) throw MissingValue(lineno, c + 1);
      double v;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw ParseError(lineno, c + 1, "'" + cell + "' is not a number");
      if (!std::isfinite(v)) throw MissingValue(lineno, c + 1);
      row[c] = v;
    }
    const auto& ts_list = series.timestamps;
    if (!ts_list.empty()) {
      const Timestamp prev = ts_list.back();
      if (ts <= prev) throw NonMonotonicTimestamp(lineno);
      if (ts_list.size() >= 2 && ts - prev != ts_list[1] - ts_list[0]) throw NonMonotonicTimestamp(lineno);
    }
    series.timestamps.push_back(ts);
    for (auto i : order) values.push_back(row[i]);
  }
  if (series.timestamps.empty()) throw SeriesTooShort("CSV holds no data rows");
  series.values = Tensor::from({series.timestamps.size(), n}, std::move(values));
  return series;
}

RawSeries ingest_csv(const std::filesystem::path& path, const std::string& target_column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_csv(in, target_column);
}

void write_csv(std::ostream& out, const RawSeries& series) {
  out << series.time_column;
  for (const auto& c : series.column_names) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < series.rows(); ++r) {
    out << format_timestamp(series.timestamps[r]);
    for (std::size_t c = 0; c < series.dims(); ++c) out << ',' << format_double(series.value(r, c));
    out << '\n';
  }
}

void write_csv(const std::filesystem::path& path, const RawSeries& series) {
  auto out = open_out(path);
  write_csv(out, series);
}

NormStats fit_stats(const RawSeries& series, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw ConfigError("train_fraction", "must lie in (0, 1]");
  const std::size_t rows = static_cast<std::size_t>(std::floor(series.rows() * train_fraction));
  if (rows == 0) throw SeriesTooShort("no training rows to fit normalization");
  const std::size_t n = series.dims();
  NormStats stats{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  for (std::size_t c = 0; c < n; ++c) {
    double mu = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mu += series.value(r, c);
    mu /= static_cast<double>(rows);
    double var = 0.0;
    for (std::size_t r = 0; r < rows; ++r) var += (series.value(r, c) - mu) * (series.value(r, c) - mu);
    var /= static_cast<double>(rows);
    if (!(var > 0.0)) throw ConstantColumn(c);
    stats.mean[c] = mu;
    stats.std[c] = std::sqrt(var);
  }
  return stats;
}

namespace {

RawSeries map_values(const RawSeries& series, const NormStats& stats, bool forward) {
  const std::size_t n = series.dims();
  if (stats.mean.size() != n || stats.std.size() != n)
    throw ConfigMismatch("n_nodes", "normalization statistics cover " +
                                        std::to_string(stats.mean.size()) + " columns, series has " +
                                        std::to_string(n));
  RawSeries out = series;
  std::vector<double> v = series.values.to_vector();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t c = i % n;
    v[i] = forward ? (v[i] - stats.mean[c]) / stats.std[c] : v[i] * stats.std[c] + stats.mean[c];
  }
  out.values = Tensor::from(series.values.shape(), std::move(v));
  return out;
}

}  // namespace

RawSeries normalize(const RawSeries& series, const NormStats& stats) {
  return map_values(series, stats, true);
}

RawSeries denormalize(const RawSeries& series, const NormStats& stats) {
  return map_values(series, stats, false);
}

std::pair<RawSeries, NormStats> fit_normalize(const RawSeries& series, double train_fraction) {
  NormStats stats = fit_stats(series, train_fraction);
  return {normalize(series, stats), std::move(stats)};
}

std::size_t window_count(std::size_t rows, std::size_t seq_len, std::size_t pred_len,
                         std::size_t stride) {
  if (stride == 0) throw ConfigError("stride", "must be positive");
  if (rows < seq_len + pred_len) return 0;
  return (rows - seq_len - pred_len) / stride + 1;
}

std::vector<WindowSample> make_windows(const RawSeries& series, const ModelConfig& config,
                                       std::size_t stride) {
  const ModelConfig cfg = config.resolved();
  if (cfg.label_len > cfg.seq_len) throw LabelLongerThanInput("label_len", "must not exceed seq_len");
  const std::size_t count = window_count(series.rows(), cfg.seq_len, cfg.pred_len, stride);
  if (count == 0)
    throw SeriesTooShort("series of " + std::to_string(series.rows()) + " rows is shorter than seq_len + pred_len = " +
                         std::to_string(cfg.seq_len + cfg.pred_len));
  const std::size_t n = series.dims();
  const auto v = series.values.data();

  // Calendar features once per row.
  std::vector<double> marks(series.rows() * kTimeFeatures);
  for (std::size_t r = 0; r < series.rows(); ++r) {
    auto f = time_features(series.timestamps[r]);
    std::copy(f.begin(), f.end(), marks.begin() + static_cast<std::ptrdiff_t>(r * kTimeFeatures));
  }
  auto rows_of = [](std::span<const double> src, std::size_t width, std::size_t start,
                    std::size_t len) {
    return std::vector<double>(src.begin() + static_cast<std::ptrdiff_t>(start * width),
                               src.begin() + static_cast<std::ptrdiff_t>((start + len) * width));
  };

  std::vector<WindowSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t s = i * stride;
    const std::size_t split = s + cfg.seq_len;
    WindowSample w;
    w.start = s;
    w.x_enc = Tensor::from({cfg.seq_len, n}, rows_of(v, n, s, cfg.seq_len));
    w.x_dec_known = Tensor::from({cfg.label_len, n}, rows_of(v, n, split - cfg.label_len, cfg.label_len));
    w.y = Tensor::from({cfg.pred_len, n}, rows_of(v, n, split, cfg.pred_len));
    w.marks_enc = Tensor::from({cfg.seq_len, kTimeFeatures}, rows_of(marks, kTimeFeatures, s, cfg.seq_len));
    w.marks_dec = Tensor::from({cfg.label_len + cfg.pred_len, kTimeFeatures},
                               rows_of(marks, kTimeFeatures, split - cfg.label_len,
                                       cfg.label_len + cfg.pred_len));
    out.push_back(std::move(w));
  }
  return out;
}

ForecastBatch make_batch(const std::vector<WindowSample>& samples,
                         std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeMismatch("empty batch");
  auto stack = [&](auto member) {
    const Tensor& first = samples.at(indices[0]).*member;
    Shape shape{indices.size()};
    shape.insert(shape.end(), first.shape().begin(), first.shape().end());
    std::vector<double> data;
    data.reserve(numel_of(shape));
    for (auto i : indices) {
      const Tensor& t = samples.at(i).*member;
      if (t.shape() != first.shape()) throw ShapeMismatch("batch samples differ in shape");
      data.insert(data.end(), t.data().begin(), t.data().end());
    }
    return Tensor::from(std::move(shape), std::move(data));
  };
  return {stack(&WindowSample::x_enc), stack(&WindowSample::marks_enc),
          stack(&WindowSample::x_dec_known), stack(&WindowSample::marks_dec),
          stack(&WindowSample::y)};
}

ForecastBatch make_batch(const std::vector<WindowSample>& samples) {
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(samples, all);
}

Splits chronological_split(const RawSeries& series, std::array<double, 3> fractions,
                           std::size_t min_rows) {
  for (double f : fractions)
    if (!(f > 0.0 && f < 1.0)) throw InvalidSplit("every split fraction must lie in (0, 1)");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw InvalidSplit("split fractions must sum to 1");
  const std::size_t total = series.rows();
  const std::size_t train = static_cast<std::size_t>(std::floor(total * fractions[0]));
  const std::size_t test = static_cast<std::size_t>(std::floor(total * fractions[2]));
  if (train + test >= total) throw SeriesTooShort("no rows left for validation");
  const std::size_t val = total - train - test;
  const std::size_t need = std::max<std::size_t>(min_rows, 1);
  if (train < need || val < need || test < need)
    throw SeriesTooShort("split segments " + std::to_string(train) + "/" + std::to_string(val) +
                         "/" + std::to_string(test) + " rows; each needs at least " +
                         std::to_string(need));
  return {series.rows_slice(0, train), series.rows_slice(train, val),
          series.rows_slice(train + val, test)};
}

void validate_couplings(const std::vector<Coupling>& couplings, std::size_t n_nodes) {
  for (const auto& c : couplings) {
    const std::string tag = std::to_string(c.src) + ":" + std::to_string(c.dst) + ":" +
                            std::to_string(c.lag) + ":" + format_double(c.weight);
    if (c.src >= n_nodes || c.dst >= n_nodes) throw InvalidCoupling(tag + " names a missing dimension");
    if (c.src == c.dst) throw InvalidCoupling(tag + " couples a dimension to itself");
    if (c.lag < 1) throw InvalidCoupling(tag + " needs lag >= 1");
    if (!std::isfinite(c.weight)) throw InvalidCoupling(tag + " has a non-finite weight");
  }
}

Coupling parse_coupling(const std::string& text) {
  std::vector<std::string> parts;
  std::istringstream is(text);
  std::string p;
  while (std::getline(is, p, ':')) parts.push_back(p);
  if (parts.size() != 4) throw InvalidCoupling("'" + text + "' is not src:dst:lag:weight");
  try {
    return {parse_uint("couple", parts[0]), parse_uint("couple", parts[1]),
            parse_uint("couple", parts[2]), parse_double("couple", parts[3])};
  } catch (const ConfigError&) {
    throw InvalidCoupling("'" + text + "' is not src:dst:lag:weight");
  }
}

SyntheticSeries synthesize_coupled(const SynthSpec& spec) {
  if (spec.n_nodes == 0) throw ConfigError("n", "must be positive");
  if (spec.length < 2) throw ConfigError("t", "must be at least 2");
  if (!(spec.noise_std >= 0.0)) throw ConfigError("noise", "must be non-negative");
  if (spec.interval_seconds <= 0) throw ConfigError("interval", "must be positive");
  validate_couplings(spec.couplings, spec.n_nodes);

  const std::size_t n = spec.n_nodes;
  Rng rng(spec.seed);
  std::vector<double> x(spec.length * n, 0.0);
  for (std::size_t d = 0; d < n; ++d) x[d] = rng.normal();
  for (std::size_t t = 1; t < spec.length; ++t) {
    for (std::size_t d = 0; d < n; ++d) {
      double v = spec.ar_coefficient * x[(t - 1) * n + d];
      for (const auto& c : spec.couplings)
        if (c.dst == d && t >= c.lag) v += c.weight * x[(t - c.lag) * n + c.src];
      if (spec.noise_std > 0.0) v += spec.noise_std * rng.normal();
      x[t * n + d] = v;
    }
  }
  for (double v : x)
    if (!std::isfinite(v)) throw NonFiniteValue("synthetic series diverged; reduce AR or coupling weights");

  SyntheticSeries out;
  out.couplings = spec.couplings;
  out.series.values = Tensor::from({spec.length, n}, std::move(x));
  for (std::size_t t = 0; t < spec.length; ++t)
    out.series.timestamps.push_back(spec.start + static_cast<Timestamp>(t) * spec.interval_seconds);
  for (std::size_t d = 0; d < n; ++d) out.series.column_names.push_back("x" + std::to_string(d));
  return out;
}

void write_couplings_csv(const std::filesystem::path& path, const std::vector<Coupling>& couplings) {
  auto out = open_out(path);
  out << "src,dst,lag,weight\n";
  for (const auto& c : couplings)
    out << c.src << ',' << c.dst << ',' << c.lag << ',' << format_double(c.weight) << '\n';
}

std::vector<Coupling> read_couplings_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<Coupling> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip(line);
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 4) throw ParseError(lineno, cells.size(), "expected src,dst,lag,weight");
    try {
      out.push_back({parse_uint("src", cells[0]), parse_uint("dst", cells[1]),
                     parse_uint("lag", cells[2]), parse_double("weight", cells[3])});
    } catch (const ConfigError& e) {
      throw ParseError(lineno, 0, e.what());
    }
  }
  return out;
}

}  // namespace adpgcn::data
