// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "drat/block.hpp"
#include "drat/op_counter.hpp"
#include "drat/tensor.hpp"

// Straight-loop re-implementations used as oracles. They share no code with
// the autograd ops so that a defect in one shows up as a disagreement.
namespace drat::ref {

struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

Matrix from_tensor(const Tensor& t);
Tensor to_tensor(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix layer_norm(const Matrix& x, const std::vector<double>& gamma, const std::vector<double>& beta,
                  double eps = 1e-5);
Matrix gelu(const Matrix& x);
Matrix linear(const Matrix& x, const Matrix& w, const std::vector<double>& b);

/// softmax(Q K^T / sqrt(d_h)) V per head over all tokens. Tallies into
/// `counter` when non-null.
Matrix full_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                      OpCounter* counter = nullptr);

/// X + MSA(X Wq, Y Wk, Y Wv), then + FFN(LN(.)).
Matrix attention_block(const BlockParams& p, const Matrix& x, const Matrix& y, std::size_t heads);

}  // namespace drat::ref

namespace drat {

/// Unwindowed multi-head attention over all tokens; q [nq, d], k/v [nk, d].
/// Counts into the active OpCounter. No gradient.
Tensor full_attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

}  // namespace drat
