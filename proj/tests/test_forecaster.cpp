#include <doctest.h>

#include <cmath>

#include "adpgcn/errors.hpp"
#include "adpgcn/forecaster.hpp"
#include "adpgcn/gradcheck.hpp"
#include "adpgcn/ops.hpp"
#include "test_util.hpp"

using namespace adpgcn;
using namespace adpgcn::model;
using testutil::bitwise_equal;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

ModelConfig tiny_config(bool use_gcn = true) {
  ModelConfig c;
  c.n_nodes = 4;
  c.seq_len = 16;
  c.label_len = 8;
  c.pred_len = 4;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.use_gcn = use_gcn;
  c.gcn.hidden = 4;
  c.seed = 5;
  return c;
}

data::ForecastBatch random_batch(const ModelConfig& cfg, std::size_t b, Rng& rng) {
  const auto c = cfg.resolved();
  data::ForecastBatch batch;
  batch.x_enc = random_tensor({b, c.seq_len, c.n_nodes}, rng);
  batch.marks_enc = random_tensor({b, c.seq_len, c.time_features}, rng, false, -0.5, 0.5);
  std::vector<double> known;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = c.seq_len - c.label_len; t < c.seq_len; ++t)
      for (std::size_t n = 0; n < c.n_nodes; ++n) known.push_back(batch.x_enc.at({i, t, n}));
  batch.x_dec_known = Tensor::from({b, c.label_len, c.n_nodes}, known);
  batch.marks_dec = random_tensor({b, c.label_len + c.pred_len, c.time_features}, rng, false, -0.5, 0.5);
  batch.y = random_tensor({b, c.pred_len, c.n_nodes}, rng);
  return batch;
}

AttentionParams random_attention(std::size_t d, Rng& rng) {
  return {random_tensor({d, d}, rng), random_tensor({d}, rng), random_tensor({d, d}, rng),
          random_tensor({d}, rng),    random_tensor({d, d}, rng), random_tensor({d}, rng),
          random_tensor({d, d}, rng), random_tensor({d}, rng)};
}

// Single-head attention written with explicit loops.
std::vector<double> attention_oracle(const AttentionParams& p, const Tensor& x, std::size_t len,
                                     std::size_t d) {
  auto project = [&](const Tensor& w, const Tensor& b) {
    std::vector<double> out(len * d);
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = b.data()[j];
        for (std::size_t k = 0; k < d; ++k) s += x.data()[i * d + k] * w.data()[k * d + j];
        out[i * d + j] = s;
      }
    return out;
  };
  const auto q = project(p.w_query, p.b_query), k = project(p.w_key, p.b_key),
             v = project(p.w_value, p.b_value);
  std::vector<double> ctx(len * d, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    std::vector<double> s(len);
    double mx = -1e300;
    for (std::size_t j = 0; j < len; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * k[j * d + c];
      s[j] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (auto& e : s) z += (e = std::exp(e - mx));
    for (std::size_t j = 0; j < len; ++j)
      for (std::size_t c = 0; c < d; ++c) ctx[i * d + c] += s[j] / z * v[j * d + c];
  }
  std::vector<double> out(len * d);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = p.b_out.data()[j];
      for (std::size_t c = 0; c < d; ++c) s += ctx[i * d + c] * p.w_out.data()[c * d + j];
      out[i * d + j] = s;
    }
  return out;
}

}  // namespace

TEST_CASE("config validation names the key") {
  auto c = tiny_config();
  c.label_len = 20;
  CHECK_THROWS_AS(c.validate(), LabelLongerThanInput);
  c = tiny_config();
  c.n_heads = 3;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "n_heads");
  }
  c = tiny_config();
  c.pred_len = 0;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "pred_len");
  }
  ModelConfig defaults;
  CHECK(defaults.resolved().label_len == 48);
  defaults.seq_len = 48;
  CHECK(defaults.resolved().label_len == 24);
}

TEST_CASE("embed examples") {
  Rng rng(31);
  const EmbeddingParams p{random_tensor({3, 64}, rng), random_tensor({4, 64}, rng)};
  const auto zero = embed(p, Tensor::zeros({2, 24, 3}), Tensor::zeros({2, 24, 4}));
  CHECK(zero.shape() == Shape{2, 24, 64});
  const auto pe = positional_encoding(24, 64);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 24 * 64; ++i) CHECK(zero.data()[b * 24 * 64 + i] == pe.data()[i]);

  const auto x = random_tensor({2, 24, 3}, rng);
  const auto marks = Tensor::zeros({2, 24, 4});
  const auto once = ops::sub(embed(p, x, marks), zero);
  const auto twice = ops::sub(embed(p, ops::scale(x, 2), marks), zero);
  CHECK(max_abs_diff(twice.data(), ops::scale(once, 2).data()) < 1e-12);
  CHECK_THROWS_AS(embed(p, x, Tensor::zeros({2, 23, 4})), ShapeMismatch);
}

TEST_CASE("attention examples") {
  Rng rng(32);
  const auto p = random_attention(4, rng);
  const auto x1 = random_tensor({1, 1, 4}, rng);
  const auto out1 = multi_head_attention(p, x1, x1, x1, 2, false);
  const auto v_proj = ops::linear(ops::linear(x1, p.w_value, p.b_value), p.w_out, p.b_out);
  CHECK(max_abs_diff(out1.data(), v_proj.data()) < 1e-12);

  const auto q = random_tensor({1, 3, 4}, rng);
  const auto row = random_tensor({1, 1, 4}, rng);
  const auto keys = ops::concat({row, row, row, row, row}, 1);
  const auto w = attention_weights(p, q, keys, 2, false);
  CHECK(w.shape() == Shape{2, 3, 5});
  for (double v : w.data()) CHECK(std::abs(v - 0.2) < 1e-12);
}

TEST_CASE("attention matches loop oracle") {
  Rng rng(33);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = random_attention(4, rng);
    const auto x = random_tensor({1, 3, 4}, rng);
    const auto out = multi_head_attention(p, x, x, x, 1, false);
    CHECK(max_abs_diff(out.data(), attention_oracle(p, x, 3, 4)) < 1e-10);
  }
}

TEST_CASE("causal attention never looks ahead") {
  Rng rng(34);
  const auto p = random_attention(8, rng);
  auto x = random_tensor({1, 6, 8}, rng);
  const auto w = attention_weights(p, x, x, 2, true);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = i + 1; j < 6; ++j) CHECK(w.at({h, i, j}) == 0.0);
}

TEST_CASE("encoder output length") {
  ModelConfig c;
  c.n_nodes = 3;
  c.seq_len = 48;
  c.pred_len = 24;
  c.d_model = 32;
  Forecaster f(c);
  Rng rng(35);
  const auto out = f.encode(random_tensor({2, 48, 3}, rng), random_tensor({2, 48, 4}, rng));
  CHECK(out.shape() == Shape{2, 24, 32});
}

TEST_CASE("zero input gives deterministic nonzero encoding") {
  Forecaster f(tiny_config());
  const auto a = f.encode(Tensor::zeros({1, 16, 4}), Tensor::zeros({1, 16, 4}));
  const auto b = f.encode(Tensor::zeros({1, 16, 4}), Tensor::zeros({1, 16, 4}));
  CHECK(bitwise_equal(a.data(), b.data()));
  double norm = 0.0;
  for (double v : a.data()) norm += v * v;
  CHECK(norm > 0.0);
}

TEST_CASE("ablation switch keeps host initialization") {
  Forecaster with(tiny_config(true)), without(tiny_config(false));
  CHECK_FALSE(without.has_gcn());
  CHECK(without.learned_adjacency() == std::nullopt);
  for (const auto& [name, t] : without.named_parameters()) {
    CAPTURE(name);
    CHECK(name.rfind("gcn.", 0) != 0);
    const auto twin = with.find_parameter(name);
    REQUIRE(twin.has_value());
    CHECK(bitwise_equal(t.data(), twin->data()));
  }
  CHECK(with.parameter_count() > without.parameter_count());

  for (auto& layer : const_cast<graph::GcnBlockParams&>(with.encoder_gcn()).layers)
    for (auto& w : layer.weights) std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0);
  for (auto& layer : const_cast<graph::GcnBlockParams&>(with.decoder_gcn()).layers)
    for (auto& w : layer.weights) std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0);
  Rng rng(36);
  const auto batch = random_batch(tiny_config(), 3, rng);
  CHECK(bitwise_equal(with.forward(batch).data(), without.forward(batch).data()));
}

TEST_CASE("toggling the GCN changes predictions") {
  Forecaster with(tiny_config(true)), without(tiny_config(false));
  Rng rng(37);
  const auto batch = random_batch(tiny_config(), 2, rng);
  CHECK(max_abs_diff(with.forward(batch).data(), without.forward(batch).data()) > 1e-6);
}

TEST_CASE("decoder contract") {
  Forecaster f(tiny_config());
  Rng rng(38);
  auto batch = random_batch(tiny_config(), 3, rng);
  const auto out = f.forward(batch);
  CHECK(out.shape() == Shape{3, 4, 4});

  const auto assembled = assemble_decoder_input(batch.x_dec_known, 4);
  CHECK(assembled.shape() == Shape{3, 12, 4});
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t t = 8; t < 12; ++t)
      for (std::size_t n = 0; n < 4; ++n) CHECK(assembled.at({b, t, n}) == 0.0);

  batch.y = random_tensor({3, 4, 4}, rng, false, 5, 10);
  CHECK(bitwise_equal(f.forward(batch).data(), out.data()));

  auto w = *f.find_parameter("proj.weight");
  std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0);
  const auto bias = f.find_parameter("proj.bias")->to_vector();
  const auto flat = f.forward(batch);
  for (std::size_t i = 0; i < flat.numel(); ++i) CHECK(flat.data()[i] == bias[i % 4]);

  CHECK_THROWS_AS(f.decode(random_tensor({3, 20, 4}, rng), batch.marks_dec, f.encode(batch.x_enc, batch.marks_enc)),
                  LabelLongerThanInput);
  CHECK_THROWS_AS(f.forward(random_batch([] {
                    auto c = tiny_config();
                    c.n_nodes = 5;
                    return c;
                  }(), 1, rng)),
                  ShapeMismatch);
}

TEST_CASE("decoder self-attention is causal") {
  Forecaster f(tiny_config());
  Rng rng(39);
  const auto batch = random_batch(tiny_config(), 1, rng);
  const auto enc = f.encode(batch.x_enc, batch.marks_enc);
  const auto base = f.decode_full(batch.x_dec_known, batch.marks_dec, enc);
  for (std::size_t j = 1; j < 8; ++j) {
    auto known = batch.x_dec_known.to_vector();
    for (std::size_t n = 0; n < 4; ++n) known[j * 4 + n] += 1.5;
    const auto out = f.decode_full(Tensor::from(batch.x_dec_known.shape(), known), batch.marks_dec, enc);
    for (std::size_t t = 0; t < j; ++t)
      for (std::size_t n = 0; n < 4; ++n) CHECK(out.at({0, t, n}) == base.at({0, t, n}));
    bool changed = false;
    for (std::size_t n = 0; n < 4; ++n) changed |= out.at({0, j, n}) != base.at({0, j, n});
    CHECK(changed);
  }
}

TEST_CASE("eval-mode forward is bitwise deterministic") {
  Forecaster f(tiny_config());
  Rng rng(40);
  const auto batch = random_batch(tiny_config(), 2, rng);
  CHECK(bitwise_equal(f.forward(batch).data(), f.forward(batch).data()));
  f.set_training(true);
  const auto a = f.forward(batch);
  const auto b = f.forward(batch);
  CHECK_FALSE(bitwise_equal(a.data(), b.data()));
}

TEST_CASE("output shape across a config grid") {
  Rng rng(41);
  for (std::size_t seq : {8, 12, 16})
    for (std::size_t pred : {1, 4, 7})
      for (bool gcn : {true, false})
        for (std::size_t heads : {1, 2, 4}) {
          auto c = tiny_config(gcn);
          c.seq_len = seq;
          c.label_len = seq / 2;
          c.pred_len = pred;
          c.n_heads = heads;
          c.n_nodes = 1 + seq % 5;
          Forecaster f(c);
          const auto out = f.forward(random_batch(c, 2, rng));
          CHECK(out.shape() == Shape{2, pred, c.n_nodes});
        }
}

TEST_CASE("every parameter receives gradient") {
  for (std::size_t order : {2, 0}) {
    auto c = tiny_config();
    c.gcn.order = order;
    Forecaster f(c);
    Rng rng(42);
    const auto batch = random_batch(c, 2, rng);
    ops::mse_loss(f.forward(batch), batch.y).backward();
    for (const auto& [name, t] : f.named_parameters()) {
      CAPTURE(name);
      double norm = 0.0;
      for (double g : t.grad()) norm += g * g;
      if (order == 0 && name.rfind("gcn.adj.", 0) == 0)
        CHECK(norm == 0.0);
      else
        CHECK(norm > 0.0);
    }
  }
}

TEST_CASE("forecaster gradient audit") {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto c = tiny_config();
    c.seed = seed;
    Forecaster f(c);
    Rng rng(seed + 100);
    const auto batch = random_batch(c, 2, rng);
    auto loss = [&] { return ops::mse_loss(f.forward(batch), batch.y); };
    GradCheckOptions opt;
    opt.max_coordinates = 20;
    opt.seed = seed;
    CHECK(finite_difference_check(loss, f.parameters(), opt) < 1e-3);
  }
}
