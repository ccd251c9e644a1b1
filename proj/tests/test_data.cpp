#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "adpgcn/data.hpp"
#include "adpgcn/errors.hpp"
#include "test_util.hpp"

using namespace adpgcn;
using namespace adpgcn::data;
using testutil::bitwise_equal;

namespace {

RawSeries toy_series(std::size_t rows, std::size_t cols, std::uint64_t seed = 1) {
  SynthSpec spec;
  spec.n_nodes = cols;
  spec.length = rows;
  spec.seed = seed;
  return synthesize_coupled(spec).series;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("adpgcn_test_data_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("timestamps round trip and calendar features") {
  const auto ts = parse_timestamp("2016-07-01 13:00:00");
  CHECK(ts == 1467378000);
  CHECK(format_timestamp(ts) == "2016-07-01 13:00:00");
  const auto f = time_features(ts);  // Friday
  CHECK(f[0] == doctest::Approx(6.0 / 11.0 - 0.5));
  CHECK(f[1] == doctest::Approx(-0.5));
  CHECK(f[2] == doctest::Approx(4.0 / 6.0 - 0.5));
  CHECK(f[3] == doctest::Approx(13.0 / 23.0 - 0.5));
  CHECK(time_features(parse_timestamp("2024-01-01 00:00:00"))[2] == -0.5);  // Monday
  CHECK_THROWS_AS(parse_timestamp("2016-13-01 00:00:00"), DataError);
  CHECK_THROWS_AS(parse_timestamp("yesterday"), DataError);
}

TEST_CASE("ETT-style header puts the target last") {
  std::istringstream in(
      "date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n"
      "2016-07-01 00:00:00,5.827,2.009,1.599,0.462,4.203,1.340,30.531\n"
      "2016-07-01 01:00:00,5.693,2.076,1.492,0.426,4.142,1.371,27.787\n");
  const auto s = read_csv(in, "OT");
  CHECK(s.dims() == 7);
  CHECK(s.column_names.back() == "OT");
  CHECK(s.value(1, 6) == 27.787);

  std::istringstream moved("date,a,b,c\n2016-07-01 00:00:00,1,2,3\n2016-07-01 01:00:00,4,5,6\n");
  const auto m = read_csv(moved, "a");
  CHECK(m.column_names == std::vector<std::string>{"b", "c", "a"});
  CHECK(m.value(0, 2) == 1.0);
  CHECK(m.value(1, 0) == 5.0);
}

TEST_CASE("CSV error paths name the row") {
  std::istringstream gap(
      "date,a\n2016-07-01 00:00:00,1\n2016-07-01 01:00:00,2\n2016-07-01 03:00:00,3\n");
  try {
    read_csv(gap);
    FAIL("expected NonMonotonicTimestamp");
  } catch (const NonMonotonicTimestamp& e) {
    CHECK(e.row == 4);
  }
  std::istringstream back("date,a\n2016-07-01 01:00:00,1\n2016-07-01 00:00:00,2\n");
  CHECK_THROWS_AS(read_csv(back), NonMonotonicTimestamp);
  std::istringstream blank("date,a,b\n2016-07-01 00:00:00,1,\n");
  try {
    read_csv(blank);
    FAIL("expected MissingValue");
  } catch (const MissingValue& e) {
    CHECK(e.row == 2);
    CHECK(e.col == 2);
  }
  std::istringstream bad("date,a\n2016-07-01 00:00:00,abc\n");
  CHECK_THROWS_AS(read_csv(bad), ParseError);
  std::istringstream bad_ts("date,a\nnot-a-time,1\n");
  CHECK_THROWS_AS(read_csv(bad_ts), ParseError);
  std::istringstream no_target("date,a\n2016-07-01 00:00:00,1\n");
  CHECK_THROWS_AS(read_csv(no_target, "OT"), ConfigError);
}

TEST_CASE("CSV write and read round trip") {
  const auto s = toy_series(30, 3);
  std::stringstream buf;
  write_csv(buf, s);
  const auto back = read_csv(buf);
  CHECK(back.column_names == s.column_names);
  CHECK(back.timestamps == s.timestamps);
  CHECK(bitwise_equal(back.values.data(), s.values.data()));
}

TEST_CASE("fit_normalize examples") {
  RawSeries s;
  s.timestamps = {0, 3600, 7200};
  s.column_names = {"a"};
  s.values = Tensor::from({3, 1}, {1, 2, 3});
  const auto [norm, stats] = fit_normalize(s, 1.0);
  CHECK(stats.mean[0] == 2.0);
  CHECK(stats.std[0] == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
  double sum = 0.0;
  for (double v : norm.values.data()) sum += v;
  CHECK(std::abs(sum) < 1e-15);

  s.values = Tensor::from({3, 1}, {4, 4, 4});
  CHECK_THROWS_AS(fit_normalize(s, 1.0), ConstantColumn);
}

TEST_CASE("normalization round trip and train-only statistics") {
  Rng rng(51);
  for (int trial = 0; trial < 10; ++trial) {
    auto s = toy_series(200, 3, rng.next_u64());
    const auto [norm, stats] = fit_normalize(s, 0.7);
    const auto back = denormalize(norm, stats);
    CHECK(testutil::max_abs_diff(back.values.data(), s.values.data()) < 1e-12);

    auto changed = s;
    std::vector<double> v = s.values.to_vector();
    for (std::size_t i = 140 * 3; i < v.size(); ++i) v[i] = rng.uniform(-100, 100);
    changed.values = Tensor::from(s.values.shape(), v);
    const auto stats2 = fit_stats(changed, 0.7);
    CHECK(stats2.mean == stats.mean);
    CHECK(stats2.std == stats.std);
  }
}

TEST_CASE("window examples") {
  ModelConfig cfg;
  cfg.n_nodes = 2;
  cfg.seq_len = 48;
  cfg.label_len = 24;
  cfg.pred_len = 24;
  const auto s = toy_series(100, 2);
  const auto w = make_windows(s, cfg);
  CHECK(w.size() == 29);
  CHECK(w[0].y.at({0, 0}) == s.value(48, 0));
  CHECK(w[0].x_dec_known.at({0, 1}) == s.value(24, 1));
  CHECK(w[3].start == 3);
  CHECK(w[0].marks_dec.shape() == Shape{48, 4});

  const auto strided = make_windows(s, cfg, 24);
  CHECK(strided.size() == 2);
  CHECK(strided[1].start == 24);
  CHECK_THROWS_AS(make_windows(toy_series(71, 2), cfg), SeriesTooShort);
}

TEST_CASE("window count formula over a grid") {
  for (std::size_t rows : {30, 57, 100})
    for (std::size_t seq : {4, 8, 16})
      for (std::size_t pred : {1, 3, 8})
        for (std::size_t stride : {1, 2, 5}) {
          ModelConfig cfg;
          cfg.n_nodes = 1;
          cfg.seq_len = seq;
          cfg.label_len = seq / 2;
          cfg.pred_len = pred;
          const auto w = make_windows(toy_series(rows, 1), cfg, stride);
          CHECK(w.size() == window_count(rows, seq, pred, stride));
          CHECK(w.size() == (rows - seq - pred) / stride + 1);
          CHECK(w.back().start + seq + pred <= rows);
        }
}

TEST_CASE("chronological split") {
  const auto s = toy_series(1000, 2);
  const auto sp = chronological_split(s);
  CHECK(sp.train.rows() == 700);
  CHECK(sp.val.rows() == 100);
  CHECK(sp.test.rows() == 200);
  CHECK(sp.train.timestamps.back() < sp.val.timestamps.front());
  CHECK(sp.val.timestamps.back() < sp.test.timestamps.front());
  CHECK(sp.test.timestamps.front() == s.timestamps[800]);

  ModelConfig cfg;
  cfg.n_nodes = 2;
  cfg.seq_len = 24;
  cfg.pred_len = 12;
  for (const auto& w : make_windows(sp.test, cfg))
    CHECK(sp.test.timestamps[w.start] > sp.train.timestamps.back());

  CHECK_THROWS_AS(chronological_split(s, {1.0, 0.0, 0.0}), InvalidSplit);
  CHECK_THROWS_AS(chronological_split(s, {0.5, 0.1, 0.1}), InvalidSplit);
  CHECK_THROWS_AS(chronological_split(toy_series(20, 2), {0.7, 0.1, 0.2}, 5), SeriesTooShort);
}

TEST_CASE("batches stack samples") {
  ModelConfig cfg;
  cfg.n_nodes = 2;
  cfg.seq_len = 8;
  cfg.pred_len = 2;
  const auto w = make_windows(toy_series(40, 2), cfg);
  const std::vector<std::size_t> idx{3, 0};
  const auto b = make_batch(w, idx);
  CHECK(b.size() == 2);
  CHECK(b.x_enc.shape() == Shape{2, 8, 2});
  CHECK(b.y.at({0, 1, 1}) == w[3].y.at({1, 1}));
  CHECK(b.x_dec_known.at({1, 0, 0}) == w[0].x_dec_known.at({0, 0}));
}

TEST_CASE("synthetic generator examples") {
  SynthSpec constant;
  constant.n_nodes = 3;
  constant.length = 50;
  constant.noise_std = 0.0;
  constant.ar_coefficient = 1.0;
  const auto c = synthesize_coupled(constant).series;
  for (std::size_t t = 1; t < 50; ++t)
    for (std::size_t d = 0; d < 3; ++d) CHECK(c.value(t, d) == c.value(0, d));

  SynthSpec coupled;
  coupled.n_nodes = 2;
  coupled.length = 100;
  coupled.noise_std = 0.0;
  coupled.ar_coefficient = 0.5;
  coupled.couplings = {{0, 1, 1, 1.0}};
  const auto s = synthesize_coupled(coupled).series;
  for (std::size_t t = 1; t < 100; ++t) {
    CHECK(s.value(t, 0) == 0.5 * s.value(t - 1, 0));
    CHECK(s.value(t, 1) == 0.5 * s.value(t - 1, 1) + s.value(t - 1, 0));
  }

  SynthSpec noisy;
  noisy.couplings = {{0, 1, 1, 0.8}, {2, 3, 2, 0.5}};
  noisy.seed = 7;
  const auto a = synthesize_coupled(noisy), b = synthesize_coupled(noisy);
  CHECK(bitwise_equal(a.series.values.data(), b.series.values.data()));
  CHECK(a.couplings == noisy.couplings);
  noisy.seed = 8;
  CHECK_FALSE(bitwise_equal(a.series.values.data(), synthesize_coupled(noisy).series.values.data()));
}

TEST_CASE("noise-free lag copy is exactly predictable") {
  SynthSpec spec;
  spec.n_nodes = 2;
  spec.length = 60;
  spec.noise_std = 0.0;
  spec.ar_coefficient = 0.0;
  spec.couplings = {{0, 1, 3, 1.0}};
  spec.seed = 3;
  const auto s = synthesize_coupled(spec).series;
  for (std::size_t t = 3; t < 60; ++t) CHECK(s.value(t, 1) == s.value(t - 3, 0));
}

TEST_CASE("coupling validation and sidecar") {
  CHECK(parse_coupling("0:1:2:0.75") == Coupling{0, 1, 2, 0.75});
  CHECK_THROWS_AS(parse_coupling("0:1:2"), InvalidCoupling);
  CHECK_THROWS_AS(validate_couplings({{1, 1, 1, 0.5}}, 3), InvalidCoupling);
  CHECK_THROWS_AS(validate_couplings({{0, 1, 0, 0.5}}, 3), InvalidCoupling);
  CHECK_THROWS_AS(validate_couplings({{0, 5, 1, 0.5}}, 3), InvalidCoupling);

  const auto dir = temp_dir("sidecar");
  const std::vector<Coupling> cs{{0, 1, 1, 0.8}, {2, 0, 3, -0.25}};
  write_couplings_csv(dir / "c.csv", cs);
  CHECK(read_couplings_csv(dir / "c.csv") == cs);
  std::filesystem::remove_all(dir);
}
