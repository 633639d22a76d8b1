// SPDX-License-Identifier: Apache-2.0
#include "drat/reference.hpp"

#include <algorithm>
#include <cmath>

namespace drat::ref {

Matrix from_tensor(const Tensor& t) {
  DRAT_REQUIRE(t.rank() == 2, "reference matrices are rank 2");
  Matrix m(t.dim(0), t.dim(1));
  std::copy(t.data().begin(), t.data().end(), m.v.begin());
  return m;
}

Tensor to_tensor(const Matrix& m) { return Tensor::from({m.rows, m.cols}, m.v); }

double max_abs_diff(const Matrix& a, const Matrix& b) {
  DRAT_REQUIRE(a.rows == b.rows && a.cols == b.cols, "max_abs_diff: shape mismatch");
  double e = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) e = std::max(e, std::abs(a.v[i] - b.v[i]));
  return e;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  DRAT_REQUIRE(a.cols == b.rows, "reference matmul: inner extents differ");
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

Matrix layer_norm(const Matrix& x, const std::vector<double>& gamma, const std::vector<double>& beta, double eps) {
  Matrix out(x.rows, x.cols);
  const double n = static_cast<double>(x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += x(i, j);
    mean /= n;
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = (x(i, j) - mean) * inv * gamma[j] + beta[j];
  }
  return out;
}

Matrix gelu(const Matrix& x) {
  Matrix out = x;
  for (auto& a : out.v) a = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
  return out;
}

Matrix linear(const Matrix& x, const Matrix& w, const std::vector<double>& b) {
  Matrix out = matmul(x, w);
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += b[j];
  return out;
}

Matrix full_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads, OpCounter* counter) {
  DRAT_REQUIRE(q.cols == k.cols && k.cols == v.cols && k.rows == v.rows, "oracle attention: shape mismatch");
  DRAT_REQUIRE(heads >= 1 && q.cols % heads == 0, "oracle attention: width not divisible by heads");
  const std::size_t dh = q.cols / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix out(q.rows, q.cols);
  std::vector<double> logits(k.rows);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t i = 0; i < q.rows; ++i) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j < k.rows; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q(i, c0 + c) * k(j, c0 + c);
        logits[j] = s * scale;
        mx = std::max(mx, logits[j]);
      }
      double z = 0.0;
      for (auto& l : logits) {
        l = std::exp(l - mx);
        z += l;
      }
      for (std::size_t j = 0; j < k.rows; ++j)
        for (std::size_t c = 0; c < dh; ++c) out(i, c0 + c) += logits[j] / z * v(j, c0 + c);
    }
  }
  if (counter) {
    counter->dot_products += q.rows * k.rows;
    counter->mac_ops += 2 * q.rows * k.rows * q.cols;
  }
  return out;
}

namespace {
std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }
}  // namespace

Matrix attention_block(const BlockParams& p, const Matrix& x, const Matrix& y, std::size_t heads) {
  const auto q = matmul(x, from_tensor(p.wq));
  const auto k = matmul(y, from_tensor(p.wk));
  const auto v = matmul(y, from_tensor(p.wv));
  Matrix h = full_attention(q, k, v, heads);
  for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += x.v[i];
  const auto n = layer_norm(h, vec(p.ln_gamma), vec(p.ln_beta));
  const auto f = linear(gelu(linear(n, from_tensor(p.ffn_w1), vec(p.ffn_b1))), from_tensor(p.ffn_w2), vec(p.ffn_b2));
  for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += f.v[i];
  return h;
}

}  // namespace drat::ref

namespace drat {

Tensor full_attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  DRAT_REQUIRE(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "full_attention_oracle expects token matrices");
  require_finite(q.data(), "full_attention_oracle");
  require_finite(k.data(), "full_attention_oracle");
  require_finite(v.data(), "full_attention_oracle");
  return ref::to_tensor(ref::full_attention(ref::from_tensor(q), ref::from_tensor(k), ref::from_tensor(v), heads,
                                            active_counter()));
}

}  // namespace drat
