// SPDX-License-Identifier: Apache-2.0
#include "drat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace drat {

namespace {
thread_local OpCounter* g_counter = nullptr;
thread_local bool g_skip_scaling = false;
}  // namespace

CountingScope::CountingScope(OpCounter& counter) : previous_(g_counter) { g_counter = &counter; }
CountingScope::~CountingScope() { g_counter = previous_; }
OpCounter* active_counter() { return g_counter; }

namespace ops {

namespace fault {
SkipAttentionScaling::SkipAttentionScaling() : previous_(g_skip_scaling) { g_skip_scaling = true; }
SkipAttentionScaling::~SkipAttentionScaling() { g_skip_scaling = previous_; }
}  // namespace fault

namespace {

using NodePtr = std::shared_ptr<Node>;

void check_input(const Tensor& t, const char* op) {
  DRAT_REQUIRE(t.defined(), std::string(op) + ": undefined input");
  require_finite(t.data(), op);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  DRAT_REQUIRE(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                           " vs " + shape_str(b.shape()));
}

// Splits a shape around `axis` into (outer, axis extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_slope(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_input(a, "add");
  check_input(b, "add");
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  NodePtr pa = a.node(), pb = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](const Node& self) {
    for (const auto& p : {pa, pb}) {
      if (!p->requires_grad) continue;
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_input(a, "sub");
  check_input(b, "sub");
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  NodePtr pa = a.node(), pb = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](const Node& self) {
    if (pa->requires_grad) {
      auto g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_input(a, "mul");
  check_input(b, "mul");
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  NodePtr pa = a.node(), pb = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](const Node& self) {
    if (pa->requires_grad) {
      auto g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  check_input(a, "scale");
  std::vector<double> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  NodePtr pa = a.node();
  return make_result(a.shape(), std::move(out), {a}, [pa, factor](const Node& self) {
    auto g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

namespace {

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

std::vector<double> transposed(const double* x, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  return t;
}

// c[m,k] += g[m,n] * b[k,n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  const auto bt = transposed(b, k, n);
  gemm_nn(g, bt.data(), c, m, n, k);
}

// c[k,n] += a[m,k]^T * g[m,n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto at = transposed(a, m, k);
  gemm_nn(at.data(), g, c, k, m, n);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_input(a, "matmul");
  check_input(b, "matmul");
  DRAT_REQUIRE(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
               "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  NodePtr pa = a.node(), pb = b.node();
  return make_result({m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](const Node& self) {
    if (pa->requires_grad) gemm_nt(self.grad.data(), pb->data.data(), pa->grad_buffer().data(), m, n, k);
    if (pb->requires_grad) gemm_tn(pa->data.data(), self.grad.data(), pb->grad_buffer().data(), m, k, n);
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  check_input(x, "add_bias");
  check_input(bias, "add_bias");
  const std::size_t last = x.shape().back();
  DRAT_REQUIRE(bias.rank() == 1 && bias.dim(0) == last, "add_bias: bias must be [" + std::to_string(last) + "]");
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bv = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % last];
  NodePtr px = x.node(), pb = bias.node();
  return make_result(x.shape(), std::move(out), {x, bias}, [px, pb, last](const Node& self) {
    if (px->requires_grad) {
      auto g = px->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto g = pb->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % last] += self.grad[i];
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  check_input(x, "linear");
  check_input(weight, "linear");
  DRAT_REQUIRE(x.rank() == 2 && weight.rank() == 2 && x.dim(1) == weight.dim(0),
               "linear: incompatible shapes " + shape_str(x.shape()) + " x " + shape_str(weight.shape()));
  const std::size_t m = x.dim(0), k = x.dim(1), n = weight.dim(1);
  const bool has_bias = bias.defined();
  if (has_bias) {
    check_input(bias, "linear");
    DRAT_REQUIRE(bias.rank() == 1 && bias.dim(0) == n, "linear: bias must be [" + std::to_string(n) + "]");
  }
  std::vector<double> out(m * n, 0.0);
  if (has_bias) {
    auto bv = bias.data();
    for (std::size_t i = 0; i < m; ++i) std::copy(bv.begin(), bv.end(), out.begin() + i * n);
  }
  gemm_nn(x.data().data(), weight.data().data(), out.data(), m, k, n);
  NodePtr px = x.node(), pw = weight.node();
  NodePtr pb = has_bias ? bias.node() : nullptr;
  std::vector<Tensor> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result({m, n}, std::move(out), parents, [px, pw, pb, m, k, n](const Node& self) {
    if (px->requires_grad) gemm_nt(self.grad.data(), pw->data.data(), px->grad_buffer().data(), m, n, k);
    if (pw->requires_grad) gemm_tn(px->data.data(), self.grad.data(), pw->grad_buffer().data(), m, k, n);
    if (pb && pb->requires_grad) {
      auto g = pb->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  DRAT_REQUIRE(!parts.empty(), "concat: no inputs");
  const Shape& first = parts[0].shape();
  DRAT_REQUIRE(axis < first.size(), "concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    check_input(p, "concat");
    DRAT_REQUIRE(p.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis) DRAT_REQUIRE(p.dim(i) == first[i], "concat: extent mismatch off the concat axis");
    }
    out_shape[axis] += p.dim(axis);
  }
  const auto split = split_at(out_shape, axis);
  std::vector<double> out(shape_size(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = p.dim(axis) * split.inner;
    auto src = p.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(src.begin() + o * block, block,
                  out.begin() + o * split.extent * split.inner + offset * split.inner);
    }
    offset += p.dim(axis);
  }
  std::vector<NodePtr> nodes;
  std::vector<Tensor> parents(parts.begin(), parts.end());
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result(out_shape, std::move(out), parents, [nodes, offsets, split](const Node& self) {
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      if (!nodes[n]->requires_grad) continue;
      auto g = nodes[n]->grad_buffer();
      const std::size_t block = g.size() / split.outer;
      for (std::size_t o = 0; o < split.outer; ++o) {
        const double* src = self.grad.data() + o * split.extent * split.inner + offsets[n] * split.inner;
        double* dst = g.data() + o * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  check_input(x, "slice");
  DRAT_REQUIRE(axis < x.rank(), "slice: axis out of range");
  DRAT_REQUIRE(begin < end && end <= x.dim(axis), "slice: bad range");
  const auto split = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t block = (end - begin) * split.inner;
  std::vector<double> out(split.outer * block);
  auto src = x.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(src.begin() + o * split.extent * split.inner + begin * split.inner, block, out.begin() + o * block);
  }
  NodePtr px = x.node();
  return make_result(out_shape, std::move(out), {x}, [px, split, begin, block](const Node& self) {
    auto g = px->grad_buffer();
    for (std::size_t o = 0; o < split.outer; ++o) {
      double* dst = g.data() + o * split.extent * split.inner + begin * split.inner;
      const double* s = self.grad.data() + o * block;
      for (std::size_t i = 0; i < block; ++i) dst[i] += s[i];
    }
  });
}

Tensor transpose(const Tensor& x) {
  check_input(x, "transpose");
  DRAT_REQUIRE(x.rank() == 2, "transpose: needs a 2D tensor");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  auto src = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  NodePtr px = x.node();
  return make_result({c, r}, std::move(out), {x}, [px, r, c](const Node& self) {
    auto g = px->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor tanh(const Tensor& x) {
  check_input(x, "tanh");
  std::vector<double> out(x.size());
  auto src = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(src[i]);
  NodePtr px = x.node();
  return make_result(x.shape(), std::move(out), {x}, [px](const Node& self) {
    auto g = px->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (1.0 - self.data[i] * self.data[i]);
  });
}

Tensor gelu(const Tensor& x) {
  check_input(x, "gelu");
  std::vector<double> out(x.size());
  auto src = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(src[i]);
  NodePtr px = x.node();
  return make_result(x.shape(), std::move(out), {x}, [px](const Node& self) {
    auto g = px->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * gelu_slope(px->data[i]);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_input(x, "layer_norm");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  if (gamma.defined()) {
    check_input(gamma, "layer_norm");
    DRAT_REQUIRE(gamma.rank() == 1 && gamma.dim(0) == width, "layer_norm: gamma must match last axis");
  }
  if (beta.defined()) {
    check_input(beta, "layer_norm");
    DRAT_REQUIRE(beta.rank() == 1 && beta.dim(0) == width, "layer_norm: beta must match last axis");
  }
  std::vector<double> normed(x.size());
  std::vector<double> inv_std(rows);
  auto src = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = src.data() + r * width;
    double mu = 0.0;
    for (std::size_t i = 0; i < width; ++i) mu += row[i];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t i = 0; i < width; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < width; ++i) normed[r * width + i] = (row[i] - mu) * inv_std[r];
  }
  std::vector<double> out = normed;
  if (gamma.defined() || beta.defined()) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < width; ++i) {
        double& v = out[r * width + i];
        if (gamma.defined()) v *= gamma.data()[i];
        if (beta.defined()) v += beta.data()[i];
      }
    }
  }
  NodePtr px = x.node();
  NodePtr pg = gamma.defined() ? gamma.node() : nullptr;
  NodePtr pb = beta.defined() ? beta.node() : nullptr;
  std::vector<Tensor> parents{x};
  if (pg) parents.push_back(gamma);
  if (pb) parents.push_back(beta);
  return make_result(x.shape(), std::move(out), parents,
                     [px, pg, pb, normed = std::move(normed), inv_std = std::move(inv_std), rows,
                      width](const Node& self) {
                       const auto& gy = self.grad;
                       if (pg && pg->requires_grad) {
                         auto g = pg->grad_buffer();
                         for (std::size_t i = 0; i < gy.size(); ++i) g[i % width] += gy[i] * normed[i];
                       }
                       if (pb && pb->requires_grad) {
                         auto g = pb->grad_buffer();
                         for (std::size_t i = 0; i < gy.size(); ++i) g[i % width] += gy[i];
                       }
                       if (!px->requires_grad) return;
                       auto gx = px->grad_buffer();
                       std::vector<double> dn(width);
                       const double inv_w = 1.0 / static_cast<double>(width);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_dn = 0.0, mean_dn_n = 0.0;
                         for (std::size_t i = 0; i < width; ++i) {
                           dn[i] = gy[r * width + i] * (pg ? pg->data[i] : 1.0);
                           mean_dn += dn[i];
                           mean_dn_n += dn[i] * normed[r * width + i];
                         }
                         mean_dn *= inv_w;
                         mean_dn_n *= inv_w;
                         for (std::size_t i = 0; i < width; ++i) {
                           gx[r * width + i] +=
                               inv_std[r] * (dn[i] - mean_dn - normed[r * width + i] * mean_dn_n);
                         }
                       }
                     });
}

Tensor softmax(const Tensor& x) {
  check_input(x, "softmax");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  std::vector<double> out(x.size());
  auto src = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = src.data() + r * width;
    double* o = out.data() + r * width;
    const double mx = *std::max_element(row, row + width);
    double total = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      o[i] = std::exp(row[i] - mx);
      total += o[i];
    }
    for (std::size_t i = 0; i < width; ++i) o[i] /= total;
  }
  NodePtr px = x.node();
  return make_result(x.shape(), std::move(out), {x}, [px, rows, width](const Node& self) {
    auto g = px->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * width;
      const double* gy = self.grad.data() + r * width;
      double dot = 0.0;
      for (std::size_t i = 0; i < width; ++i) dot += gy[i] * y[i];
      for (std::size_t i = 0; i < width; ++i) g[r * width + i] += y[i] * (gy[i] - dot);
    }
  });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  check_input(x, "mean");
  DRAT_REQUIRE(axis < x.rank(), "mean: axis out of range");
  const auto split = split_at(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(split.outer * split.inner, 0.0);
  auto src = x.data();
  const double inv = 1.0 / static_cast<double>(split.extent);
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t e = 0; e < split.extent; ++e) {
      const double* s = src.data() + (o * split.extent + e) * split.inner;
      double* d = out.data() + o * split.inner;
      for (std::size_t i = 0; i < split.inner; ++i) d[i] += s[i];
    }
  }
  for (double& v : out) v *= inv;
  NodePtr px = x.node();
  return make_result(out_shape, std::move(out), {x}, [px, split, inv](const Node& self) {
    auto g = px->grad_buffer();
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t e = 0; e < split.extent; ++e) {
        double* d = g.data() + (o * split.extent + e) * split.inner;
        const double* s = self.grad.data() + o * split.inner;
        for (std::size_t i = 0; i < split.inner; ++i) d[i] += s[i] * inv;
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  check_input(x, "sum");
  double total = 0.0;
  for (double v : x.data()) total += v;
  NodePtr px = x.node();
  return make_result({1}, {total}, {x}, [px](const Node& self) {
    auto g = px->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean_all(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_input(logits, "cross_entropy");
  DRAT_REQUIRE(logits.rank() == 2, "cross_entropy: logits must be [n, classes]");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  DRAT_REQUIRE(labels.size() == n, "cross_entropy: one label per row required");
  std::vector<double> probs(n * k);
  double loss = 0.0;
  auto src = logits.data();
  for (std::size_t r = 0; r < n; ++r) {
    DRAT_REQUIRE(labels[r] >= 0 && static_cast<std::size_t>(labels[r]) < k, "cross_entropy: label out of range");
    const double* row = src.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      probs[r * k + i] = std::exp(row[i] - mx);
      total += probs[r * k + i];
    }
    for (std::size_t i = 0; i < k; ++i) probs[r * k + i] /= total;
    loss += (mx + std::log(total)) - row[labels[r]];
  }
  loss /= static_cast<double>(n);
  NodePtr pl = logits.node();
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result({1}, {loss}, {logits}, [pl, probs = std::move(probs), lab, n, k](const Node& self) {
    auto g = pl->grad_buffer();
    const double s = self.grad[0] / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t i = 0; i < k; ++i) {
        const double onehot = (static_cast<int>(i) == lab[r]) ? 1.0 : 0.0;
        g[r * k + i] += s * (probs[r * k + i] - onehot);
      }
    }
  });
}

std::size_t conv_out_extent(std::size_t extent, std::size_t kernel, std::size_t stride) {
  DRAT_REQUIRE(stride > 0, "conv: stride must be positive");
  DRAT_REQUIRE(extent >= kernel, "conv: extent " + std::to_string(extent) + " smaller than kernel " +
                                     std::to_string(kernel));
  return (extent - kernel) / stride + 1;
}

Tensor conv3d(const Tensor& input, const Tensor& kernel, Stride3 stride) {
  check_input(input, "conv3d");
  check_input(kernel, "conv3d");
  DRAT_REQUIRE(input.rank() == 4, "conv3d: input must be C x T x H x W");
  DRAT_REQUIRE(kernel.rank() == 5 && kernel.dim(1) == input.dim(0),
               "conv3d: kernel must be C_out x C_in x kt x kh x kw with matching C_in");
  const std::size_t cin = input.dim(0), t = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(0), kt = kernel.dim(2), kh = kernel.dim(3), kw = kernel.dim(4);
  const std::size_t ot = conv_out_extent(t, kt, stride[0]);
  const std::size_t oh = conv_out_extent(h, kh, stride[1]);
  const std::size_t ow = conv_out_extent(w, kw, stride[2]);
  const std::size_t st = stride[0], sh = stride[1], sw = stride[2];

  auto in = input.data();
  auto ker = kernel.data();
  std::vector<double> out(cout * ot * oh * ow, 0.0);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t z = 0; z < ot; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t dz = 0; dz < kt; ++dz)
              for (std::size_t dy = 0; dy < kh; ++dy)
                for (std::size_t dx = 0; dx < kw; ++dx)
                  acc += in[((ci * t + z * st + dz) * h + y * sh + dy) * w + x * sw + dx] *
                         ker[(((co * cin + ci) * kt + dz) * kh + dy) * kw + dx];
          out[((co * ot + z) * oh + y) * ow + x] = acc;
        }

  NodePtr pi = input.node(), pk = kernel.node();
  return make_result({cout, ot, oh, ow}, std::move(out), {input, kernel},
                     [=](const Node& self) {
    double* gi = pi->requires_grad ? pi->grad_buffer().data() : nullptr;
    double* gk = pk->requires_grad ? pk->grad_buffer().data() : nullptr;
    const double* in = pi->data.data();
    const double* ker = pk->data.data();
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t z = 0; z < ot; ++z)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t x = 0; x < ow; ++x) {
            const double go = self.grad[((co * ot + z) * oh + y) * ow + x];
            if (go == 0.0) continue;
            for (std::size_t ci = 0; ci < cin; ++ci)
              for (std::size_t dz = 0; dz < kt; ++dz)
                for (std::size_t dy = 0; dy < kh; ++dy)
                  for (std::size_t dx = 0; dx < kw; ++dx) {
                    const std::size_t ii = ((ci * t + z * st + dz) * h + y * sh + dy) * w + x * sw + dx;
                    const std::size_t ki = (((co * cin + ci) * kt + dz) * kh + dy) * kw + dx;
                    if (gi) gi[ii] += go * ker[ki];
                    if (gk) gk[ki] += go * in[ii];
                  }
          }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 std::vector<double>* probs_out) {
  check_input(q, "attention");
  check_input(k, "attention");
  check_input(v, "attention");
  DRAT_REQUIRE(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "attention: q, k, v must be token matrices");
  const std::size_t nq = q.dim(0), nk = k.dim(0), d = q.dim(1);
  DRAT_REQUIRE(k.dim(1) == d && v.dim(1) == d && v.dim(0) == nk, "attention: q/k/v width or token mismatch");
  DRAT_REQUIRE(heads > 0 && d % heads == 0,
               "attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  const double factor = g_skip_scaling ? 1.0 : 1.0 / std::sqrt(static_cast<double>(dh));

  auto qd = q.data(), kd = k.data(), vd = v.data();
  std::vector<double> probs(heads * nq * nk);
  std::vector<double> out(nq * d, 0.0);
  // Per head, keys are stored transposed (dh x nk) so score rows are built
  // with contiguous, vectorizable updates.
  std::vector<double> kt(dh * nk);
  for (std::size_t hh = 0; hh < heads; ++hh) {
    const std::size_t off = hh * dh;
    for (std::size_t j = 0; j < nk; ++j)
      for (std::size_t c = 0; c < dh; ++c) kt[c * nk + j] = kd[j * d + off + c];
    for (std::size_t i = 0; i < nq; ++i) {
      double* p = probs.data() + (hh * nq + i) * nk;
      const double* qi = qd.data() + i * d + off;
      for (std::size_t c = 0; c < dh; ++c) {
        const double qc = qi[c] * factor;
        const double* row = kt.data() + c * nk;
        for (std::size_t j = 0; j < nk; ++j) p[j] += qc * row[j];
      }
      const double mx = *std::max_element(p, p + nk);
      double total = 0.0;
      for (std::size_t j = 0; j < nk; ++j) {
        p[j] = std::exp(p[j] - mx);
        total += p[j];
      }
      const double inv = 1.0 / total;
      double* oi = out.data() + i * d + off;
      for (std::size_t j = 0; j < nk; ++j) {
        p[j] *= inv;
        const double* vj = vd.data() + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
      }
    }
  }
  if (auto* counter = g_counter) {
    counter->dot_products += nq * nk;
    counter->mac_ops += 2 * nq * nk * d;
  }
  if (probs_out) *probs_out = probs;

  NodePtr pq = q.node(), pk = k.node(), pv = v.node();
  return make_result(
      {nq, d}, std::move(out), {q, k, v},
      [pq, pk, pv, probs = std::move(probs), heads, nq, nk, d, dh, factor](const Node& self) {
        const double* qd = pq->data.data();
        const double* kd = pk->data.data();
        const double* vd = pv->data.data();
        double* gq = pq->requires_grad ? pq->grad_buffer().data() : nullptr;
        double* gk = pk->requires_grad ? pk->grad_buffer().data() : nullptr;
        double* gv = pv->requires_grad ? pv->grad_buffer().data() : nullptr;
        std::vector<double> dp(nk), ds(nk), vt(dh * nk);
        for (std::size_t hh = 0; hh < heads; ++hh) {
          const std::size_t off = hh * dh;
          for (std::size_t j = 0; j < nk; ++j)
            for (std::size_t c = 0; c < dh; ++c) vt[c * nk + j] = vd[j * d + off + c];
          for (std::size_t i = 0; i < nq; ++i) {
            const double* p = probs.data() + (hh * nq + i) * nk;
            const double* go = self.grad.data() + i * d + off;
            std::fill(dp.begin(), dp.end(), 0.0);
            for (std::size_t c = 0; c < dh; ++c) {
              const double gc = go[c];
              const double* row = vt.data() + c * nk;
              for (std::size_t j = 0; j < nk; ++j) dp[j] += gc * row[j];
            }
            double dot = 0.0;
            for (std::size_t j = 0; j < nk; ++j) dot += dp[j] * p[j];
            for (std::size_t j = 0; j < nk; ++j) ds[j] = p[j] * (dp[j] - dot) * factor;
            if (gv)
              for (std::size_t j = 0; j < nk; ++j) {
                double* gvj = gv + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) gvj[c] += p[j] * go[c];
              }
            const double* qi = qd + i * d + off;
            if (gq) {
              double* gqi = gq + i * d + off;
              for (std::size_t j = 0; j < nk; ++j) {
                const double* kj = kd + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds[j] * kj[c];
              }
            }
            if (gk)
              for (std::size_t j = 0; j < nk; ++j) {
                double* gkj = gk + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds[j] * qi[c];
              }
          }
        }
      });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  check_input(x, "gather_rows");
  DRAT_REQUIRE(x.rank() == 2, "gather_rows: needs a 2D tensor");
  DRAT_REQUIRE(!rows.empty(), "gather_rows: empty index list");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(rows.size() * d);
  auto src = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    DRAT_REQUIRE(rows[i] < n, "gather_rows: row index out of range");
    std::copy_n(src.begin() + rows[i] * d, d, out.begin() + i * d);
  }
  NodePtr px = x.node();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), d}, std::move(out), {x}, [px, idx = std::move(idx), d](const Node& self) {
    auto g = px->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = g.data() + idx[i] * d;
      const double* s = self.grad.data() + i * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += s[c];
    }
  });
}

Tensor scatter_mean_rows(const Tensor& src, std::span<const std::size_t> targets, std::size_t out_rows) {
  check_input(src, "scatter_mean_rows");
  DRAT_REQUIRE(src.rank() == 2 && src.dim(0) == targets.size(), "scatter_mean_rows: one target per source row");
  const std::size_t d = src.dim(1);
  std::vector<double> counts(out_rows, 0.0);
  for (auto t : targets) {
    DRAT_REQUIRE(t < out_rows, "scatter_mean_rows: target out of range");
    counts[t] += 1.0;
  }
  for (double c : counts) DRAT_REQUIRE(c > 0.0, "scatter_mean_rows: some output row has no source");
  std::vector<double> out(out_rows * d, 0.0);
  auto s = src.data();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    double* dst = out.data() + targets[i] * d;
    for (std::size_t c = 0; c < d; ++c) dst[c] += s[i * d + c];
  }
  for (std::size_t r = 0; r < out_rows; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] /= counts[r];
  NodePtr ps = src.node();
  std::vector<std::size_t> idx(targets.begin(), targets.end());
  return make_result({out_rows, d}, std::move(out), {src},
                     [ps, idx = std::move(idx), counts = std::move(counts), d](const Node& self) {
                       auto g = ps->grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         const double inv = 1.0 / counts[idx[i]];
                         const double* s = self.grad.data() + idx[i] * d;
                         for (std::size_t c = 0; c < d; ++c) g[i * d + c] += s[c] * inv;
                       }
                     });
}

}  // namespace ops
}  // namespace drat
