// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "drat/params.hpp"
#include "drat/tensor.hpp"

namespace drat {

/// Weights of one transformer sub-block: bias-free Q/K/V projections, then a
/// pre-normalized two-layer feed-forward expansion (D -> 4D -> D).
struct BlockParams {
  Tensor wq, wk, wv;  // D x D
  Tensor ln_gamma, ln_beta;  // D
  Tensor ffn_w1, ffn_b1;  // D x 4D, 4D
  Tensor ffn_w2, ffn_b2;  // 4D x D, D

  static BlockParams create(std::size_t dim, Rng& rng);
  std::size_t dim() const { return wq.dim(0); }
  void collect(const std::string& prefix, ParamList& out);
};

Tensor feed_forward(const BlockParams& p, const Tensor& x);

/// X <- X + MSA(X Wq, Y Wk, Y Wv);  X <- X + FFN(LN(X)).
/// `queries` [nq, D] supplies X, `keys` [nk, D] supplies Y.
Tensor attention_block(const BlockParams& p, const Tensor& queries, const Tensor& keys, std::size_t heads,
                       std::vector<double>* probs_out = nullptr);

}  // namespace drat
