// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "drat/op_counter.hpp"
#include "drat/tensor.hpp"

// Differentiable primitives. Shapes must match exactly; the only broadcast is
// a bias vector added along the last axis. Every op rejects non-finite inputs.
namespace drat::ops {

inline constexpr double kLayerNormEps = 1e-5;

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// Adds `bias` (shape [last]) to every last-axis slice of `x`.
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// x [n,in] * weight [in,out] (+ bias [out] when defined).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor transpose(const Tensor& x);

Tensor tanh(const Tensor& x);
/// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& x);

/// Normalizes every last-axis slice; gamma/beta ([last]) are optional.
Tensor layer_norm(const Tensor& x, const Tensor& gamma = {}, const Tensor& beta = {},
                  double eps = kLayerNormEps);

/// Max-subtracted softmax over the last axis.
Tensor softmax(const Tensor& x);

/// Mean over `axis`; the axis is removed (rank-1 input gives shape [1]).
Tensor mean(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// Mean over rows of -log softmax(logits)[label]. logits [n,k].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

using Stride3 = std::array<std::size_t, 3>;

/// Valid (unpadded) 3D convolution. input C_in x T x H x W, kernel
/// C_out x C_in x kt x kh x kw, strides per (T, H, W).
Tensor conv3d(const Tensor& input, const Tensor& kernel, Stride3 stride);
inline Tensor conv3d(const Tensor& input, const Tensor& kernel, std::size_t stride) {
  return conv3d(input, kernel, Stride3{stride, stride, stride});
}
std::size_t conv_out_extent(std::size_t extent, std::size_t kernel, std::size_t stride);

/// Multi-head scaled dot-product attention on token matrices.
/// q [nq,d], k/v [nk,d]; d split into `heads` slices of d/heads channels.
/// When `probs_out` is non-null it receives the heads x nq x nk probabilities.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 std::vector<double>* probs_out = nullptr);

/// Row gather on a 2D tensor; repeated rows are allowed.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// Inverse of an overlapping gather: output row r is the mean of all source
/// rows whose target is r. Every output row must receive at least one source.
Tensor scatter_mean_rows(const Tensor& src, std::span<const std::size_t> targets,
                         std::size_t out_rows);

namespace fault {
/// Test hook: while alive, attention() omits the 1/sqrt(d_h) factor.
class SkipAttentionScaling {
 public:
  SkipAttentionScaling();
  ~SkipAttentionScaling();
  SkipAttentionScaling(const SkipAttentionScaling&) = delete;
  SkipAttentionScaling& operator=(const SkipAttentionScaling&) = delete;

 private:
  bool previous_;
};
}  // namespace fault

}  // namespace drat::ops
