#include "adpgcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>

namespace adpgcn::ops {

namespace {

using detail::Node;

/// Grad buffer of input `i` of `self`, or nullptr when that input needs none.
double* input_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? in.grad_buffer().data() : nullptr;
}

const double* input_data(const Node& self, std::size_t i) { return self.inputs[i]->data.data(); }

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

// C[m×n] += A[m×k]·B[k×n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  Map(c, M, N).noalias() += MapC(a, M, K) * MapC(b, K, N);
}

// C[m×n] += A[m×k]·B[n×k]ᵀ
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  Map(c, M, N).noalias() += MapC(a, M, K) * MapC(b, N, K).transpose();
}

// C[k×n] += A[m×k]ᵀ·B[m×n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  Map(c, K, N).noalias() += MapC(a, M, K).transpose() * MapC(b, M, N);
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeMismatch(msg);
}

/// Number of times b repeats inside a: b must equal a, match a trailing
/// suffix of a's shape, or be a single value.
std::size_t broadcast_outer(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (b.numel() == 1) return a.numel();
  bool ok = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  require(ok, std::string(op) + ": cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
  return a.numel() / b.numel();
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Maps out-index -> in-index for an axis swap.
std::vector<std::size_t> swap_index_map(const Shape& in_shape, std::size_t a, std::size_t b) {
  Shape out_shape = in_shape;
  std::swap(out_shape[a], out_shape[b]);
  auto in_st = strides_of(in_shape);
  std::swap(in_st[a], in_st[b]);
  const std::size_t n = numel_of(in_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(out_shape.size(), 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < idx.size(); ++d) off += idx[d] * in_st[d];
    map[o] = off;
    for (std::size_t d = idx.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.dim() == 2 && b.dim() == 2, "matmul expects 2-D operands, got " + shape_str(a.shape()) +
                                            " and " + shape_str(b.shape()));
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  require(b.size(0) == k, "matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                              shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  return Tensor::make_result(
      {m, n}, std::move(out), {a, b},
      [m, k, n](Node& self) {
        const double* g = self.grad.data();
        if (double* ga = input_grad(self, 0)) gemm_nt(m, n, k, g, input_data(self, 1), ga);
        if (double* gb = input_grad(self, 1)) gemm_tn(m, k, n, input_data(self, 0), g, gb);
      },
      "matmul");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require(w.dim() == 2, "linear weight must be 2-D, got " + shape_str(w.shape()));
  const std::size_t k = w.size(0), n = w.size(1);
  require(x.shape().back() == k, "linear: input " + shape_str(x.shape()) + " vs weight " +
                                     shape_str(w.shape()));
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.numel() == n, "linear bias must hold " + std::to_string(n) + " values");
  const std::size_t m = x.numel() / k;
  std::vector<double> out(m * n, 0.0);
  if (has_bias) {
    const auto bd = bias.data();
    for (std::size_t i = 0; i < m; ++i) std::copy(bd.begin(), bd.end(), out.begin() + i * n);
  }
  gemm_nn(m, k, n, x.data().data(), w.data().data(), out.data());
  Shape shape = x.shape();
  shape.back() = n;
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return Tensor::make_result(
      std::move(shape), std::move(out), std::move(inputs),
      [m, k, n, has_bias](Node& self) {
        const double* g = self.grad.data();
        if (double* gx = input_grad(self, 0)) gemm_nt(m, n, k, g, input_data(self, 1), gx);
        if (double* gw = input_grad(self, 1)) gemm_tn(m, k, n, input_data(self, 0), g, gw);
        if (has_bias) {
          if (double* gb = input_grad(self, 2))
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
      },
      "linear");
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require(a.dim() == 3 && b.dim() == 3, "bmm expects 3-D operands");
  const std::size_t batch = a.size(0), m = a.size(1), k = a.size(2);
  require(b.size(0) == batch, "bmm batch extents differ");
  const std::size_t n = transpose_b ? b.size(1) : b.size(2);
  require((transpose_b ? b.size(2) : b.size(1)) == k,
          "bmm inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(batch * m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t s = 0; s < batch; ++s) {
    if (transpose_b)
      gemm_nt(m, k, n, ad + s * m * k, bd + s * n * k, out.data() + s * m * n);
    else
      gemm_nn(m, k, n, ad + s * m * k, bd + s * k * n, out.data() + s * m * n);
  }
  return Tensor::make_result(
      {batch, m, n}, std::move(out), {a, b},
      [batch, m, k, n, transpose_b](Node& self) {
        const double* g = self.grad.data();
        const double* ad = input_data(self, 0);
        const double* bd = input_data(self, 1);
        double* ga = input_grad(self, 0);
        double* gb = input_grad(self, 1);
        for (std::size_t s = 0; s < batch; ++s) {
          const double* gs = g + s * m * n;
          const double* as = ad + s * m * k;
          const double* bs = bd + s * k * n;
          if (transpose_b) {
            if (ga) gemm_nn(m, n, k, gs, bs, ga + s * m * k);
            if (gb) gemm_tn(m, n, k, gs, as, gb + s * n * k);
          } else {
            if (ga) gemm_nt(m, n, k, gs, bs, ga + s * m * k);
            if (gb) gemm_tn(m, k, n, as, gs, gb + s * k * n);
          }
        }
      },
      "bmm");
}

Tensor node_mix(const Tensor& adjacency, const Tensor& x) {
  require(adjacency.dim() == 2 && adjacency.size(0) == adjacency.size(1),
          "adjacency must be square, got " + shape_str(adjacency.shape()));
  if (x.dim() == 2) return matmul(adjacency, x);
  require(x.dim() > 2, "node_mix expects [..., N, C], got " + shape_str(x.shape()));
  const std::size_t nodes = adjacency.size(0);
  const std::size_t c = x.shape().back();
  if (x.size(x.dim() - 2) != nodes)
    throw NodeCountMismatch("adjacency has " + std::to_string(nodes) + " nodes, input " +
                            shape_str(x.shape()));
  const std::size_t groups = x.numel() / (nodes * c);
  const std::size_t block = nodes * c;
  std::vector<double> out(x.numel(), 0.0);
  const double* ad = adjacency.data().data();
  const double* xd = x.data().data();
  for (std::size_t g = 0; g < groups; ++g)
    gemm_nn(nodes, nodes, c, ad, xd + g * block, out.data() + g * block);
  return Tensor::make_result(
      x.shape(), std::move(out), {adjacency, x},
      [groups, nodes, c, block](Node& self) {
        const double* g = self.grad.data();
        const double* ad = input_data(self, 0);
        const double* xd = input_data(self, 1);
        double* gadj = input_grad(self, 0);
        double* gx = input_grad(self, 1);
        for (std::size_t s = 0; s < groups; ++s) {
          if (gadj) gemm_nt(nodes, c, nodes, g + s * block, xd + s * block, gadj);
          if (gx) gemm_tn(nodes, nodes, c, ad, g + s * block, gx + s * block);
        }
      },
      "node_mix");
}

Tensor transpose(const Tensor& x) {
  require(x.dim() == 2, "transpose expects a 2-D tensor, got " + shape_str(x.shape()));
  return swap_axes(x, 0, 1);
}

Tensor swap_axes(const Tensor& x, std::size_t a, std::size_t b) {
  require(a < x.dim() && b < x.dim(), "swap_axes axis out of range for " + shape_str(x.shape()));
  Shape shape = x.shape();
  std::swap(shape[a], shape[b]);
  auto map = swap_index_map(x.shape(), a, b);
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xd[map[o]];
  return Tensor::make_result(
      std::move(shape), std::move(out), {x},
      [map = std::move(map)](Node& self) {
        if (double* gx = input_grad(self, 0))
          for (std::size_t o = 0; o < map.size(); ++o) gx[map[o]] += self.grad[o];
      },
      "swap_axes");
}

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer(a, b, "add");
  const std::size_t inner = b.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += bd[i];
  return Tensor::make_result(
      a.shape(), std::move(out), {a, b},
      [outer, inner](Node& self) {
        const auto& g = self.grad;
        if (double* ga = input_grad(self, 0))
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (double* gb = input_grad(self, 1))
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) gb[i] += g[o * inner + i];
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer(a, b, "sub");
  const std::size_t inner = b.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] -= bd[i];
  return Tensor::make_result(
      a.shape(), std::move(out), {a, b},
      [outer, inner](Node& self) {
        const auto& g = self.grad;
        if (double* ga = input_grad(self, 0))
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (double* gb = input_grad(self, 1))
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) gb[i] -= g[o * inner + i];
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer(a, b, "mul");
  const std::size_t inner = b.numel();
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = ad[o * inner + i] * bd[i];
  return Tensor::make_result(
      a.shape(), std::move(out), {a, b},
      [outer, inner](Node& self) {
        const auto& g = self.grad;
        const double* ad = input_data(self, 0);
        const double* bd = input_data(self, 1);
        if (double* ga = input_grad(self, 0))
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) ga[o * inner + i] += g[o * inner + i] * bd[i];
        if (double* gb = input_grad(self, 1))
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) gb[i] += g[o * inner + i] * ad[o * inner + i];
      },
      "mul");
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= s;
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [s](Node& self) {
        if (double* gx = input_grad(self, 0))
          for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += s * self.grad[i];
      },
      "scale");
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [](Node& self) {
        const double* xd = input_data(self, 0);
        if (double* gx = input_grad(self, 0))
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (xd[i] > 0.0) gx[i] += self.grad[i];
      },
      "relu");
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * xd[i] * (1.0 + std::erf(xd[i] * inv_sqrt2));
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [](Node& self) {
        const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        const double* xd = input_data(self, 0);
        if (double* gx = input_grad(self, 0))
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double v = xd[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            gx[i] += self.grad[i] * (cdf + v * pdf);
          }
      },
      "gelu");
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return Tensor::make_result(
      {1}, {acc}, {x},
      [](Node& self) {
        if (double* gx = input_grad(self, 0)) {
          const double g = self.grad[0];
          for (std::size_t i = 0; i < self.inputs[0]->data.size(); ++i) gx[i] += g;
        }
      },
      "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  require(axis < x.dim(), "sum_axis axis out of range for " + shape_str(x.shape()));
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) shape.push_back(s[i]);
  if (shape.empty()) shape = {1};
  std::vector<double> out(outer * inner, 0.0);
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xd[(o * len + l) * inner + i];
  return Tensor::make_result(
      std::move(shape), std::move(out), {x},
      [outer, inner, len](Node& self) {
        if (double* gx = input_grad(self, 0))
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l)
              for (std::size_t i = 0; i < inner; ++i)
                gx[(o * len + l) * inner + i] += self.grad[o * inner + i];
      },
      "sum_axis");
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel_of(shape) == x.numel(),
          "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result(
      std::move(shape), std::move(out), {x},
      [](Node& self) {
        if (double* gx = input_grad(self, 0))
          for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
      },
      "reshape");
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat of zero tensors");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat axis out of range for " + shape_str(first));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    require(ok, "concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    lens.push_back(s[axis]);
    total += s[axis];
  }
  Shape shape = first;
  shape[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto pd = parts[p].data();
    const std::size_t chunk = lens[p] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pd.begin() + o * chunk, chunk, out.begin() + o * total * inner + offset);
    offset += chunk;
  }
  return Tensor::make_result(
      std::move(shape), std::move(out), parts,
      [outer, inner, total, lens](Node& self) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < lens.size(); ++p) {
          const std::size_t chunk = lens[p] * inner;
          if (double* gp = input_grad(self, p))
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < chunk; ++i)
                gp[o * chunk + i] += self.grad[o * total * inner + offset + i];
          offset += chunk;
        }
      },
      "concat");
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require(axis < x.dim(), "slice axis out of range for " + shape_str(x.shape()));
  const auto& s = x.shape();
  require(length > 0 && start + length <= s[axis],
          "slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
              ") out of range for axis of extent " + std::to_string(s[axis]));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape shape = s;
  shape[axis] = length;
  std::vector<double> out(outer * length * inner);
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xd.begin() + (o * len + start) * inner, length * inner,
                out.begin() + o * length * inner);
  return Tensor::make_result(
      std::move(shape), std::move(out), {x},
      [outer, inner, len, start, length](Node& self) {
        if (double* gx = input_grad(self, 0))
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < length * inner; ++i)
              gx[(o * len + start) * inner + i] += self.grad[o * length * inner + i];
      },
      "slice");
}

Tensor softmax_rows(const Tensor& x) {
  require(x.dim() == 2, "softmax_rows expects a 2-D tensor, got " + shape_str(x.shape()));
  return softmax_last(x);
}

Tensor softmax_last(const Tensor& x, bool causal) {
  const auto& s = x.shape();
  const std::size_t cols = s.back();
  const std::size_t rows = x.numel() / cols;
  std::size_t queries = 1;
  if (causal) {
    require(s.size() >= 2, "causal softmax needs a [.., L_q, L_k] block");
    queries = s[s.size() - 2];
  }
  std::vector<double> out(x.numel(), 0.0);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t visible = causal ? std::min(cols, r % queries + 1) : cols;
    const double* xr = xd.data() + r * cols;
    double* yr = out.data() + r * cols;
    double mx = xr[0];
    for (std::size_t j = 1; j < visible; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < visible; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < visible; ++j) yr[j] /= z;
  }
  return Tensor::make_result(
      s, std::move(out), {x},
      [rows, cols](Node& self) {
        double* gx = input_grad(self, 0);
        if (!gx) return;
        const double* y = self.data.data();
        const double* g = self.grad.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* yr = y + r * cols;
          const double* gr = g + r * cols;
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
          for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += yr[j] * (gr[j] - dot);
        }
      },
      "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.shape().back();
  require(gamma.numel() == d && beta.numel() == d,
          "layer_norm affine parameters must hold " + std::to_string(d) + " values");
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * rstd[r];
      out[r * d + j] = gd[j] * xhat[r * d + j] + bd[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        const double* g = self.grad.data();
        const double* gd = input_data(self, 1);
        double* gx = input_grad(self, 0);
        double* ggamma = input_grad(self, 1);
        double* gbeta = input_grad(self, 2);
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g + r * d;
          const double* hr = xhat.data() + r * d;
          if (ggamma)
            for (std::size_t j = 0; j < d; ++j) ggamma[j] += gr[j] * hr[j];
          if (gbeta)
            for (std::size_t j = 0; j < d; ++j) gbeta[j] += gr[j];
          if (gx) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = gr[j] * gd[j];
              m1 += dh;
              m2 += dh * hr[j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (std::size_t j = 0; j < d; ++j)
              gx[r * d + j] += rstd[r] * (gr[j] * gd[j] - m1 - hr[j] * m2);
          }
        }
      },
      "layer_norm");
}

Tensor max_pool_half(const Tensor& x) {
  require(x.dim() == 3, "max_pool_half expects [B, L, D], got " + shape_str(x.shape()));
  const std::size_t b = x.size(0), len = x.size(1), d = x.size(2);
  const std::size_t half = len / 2;
  require(half > 0, "max_pool_half needs length >= 2");
  std::vector<double> out(b * half * d);
  std::vector<std::size_t> source(out.size());
  const auto xd = x.data();
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t t = 0; t < half; ++t)
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t i0 = (s * len + 2 * t) * d + j;
        const std::size_t i1 = i0 + d;
        const std::size_t o = (s * half + t) * d + j;
        source[o] = xd[i1] > xd[i0] ? i1 : i0;
        out[o] = xd[source[o]];
      }
  return Tensor::make_result(
      {b, half, d}, std::move(out), {x},
      [source = std::move(source)](Node& self) {
        if (double* gx = input_grad(self, 0))
          for (std::size_t o = 0; o < source.size(); ++o) gx[source[o]] += self.grad[o];
      },
      "max_pool_half");
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw Error("dropout rate must be below 1");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [mask = std::move(mask)](Node& self) {
        if (double* gx = input_grad(self, 0))
          for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += self.grad[i] * mask[i];
      },
      "dropout");
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  require(prediction.shape() == target.shape(), "mse_loss shapes differ: " +
                                                    shape_str(prediction.shape()) + " vs " +
                                                    shape_str(target.shape()));
  const auto pd = prediction.data();
  const auto td = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < pd.size(); ++i) acc += (pd[i] - td[i]) * (pd[i] - td[i]);
  const double n = static_cast<double>(pd.size());
  return Tensor::make_result(
      {1}, {acc / n}, {prediction, target},
      [n](Node& self) {
        const double g = self.grad[0] * 2.0 / n;
        const double* pd = input_data(self, 0);
        const double* td = input_data(self, 1);
        const std::size_t count = self.inputs[0]->data.size();
        if (double* gp = input_grad(self, 0))
          for (std::size_t i = 0; i < count; ++i) gp[i] += g * (pd[i] - td[i]);
        if (double* gt = input_grad(self, 1))
          for (std::size_t i = 0; i < count; ++i) gt[i] -= g * (pd[i] - td[i]);
      },
      "mse_loss");
}

}  // namespace adpgcn::ops
