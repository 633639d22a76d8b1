// SPDX-License-Identifier: Apache-2.0
#include "drat/block.hpp"

#include <cmath>

#include "drat/ops.hpp"

namespace drat {

BlockParams BlockParams::create(std::size_t dim, Rng& rng) {
  DRAT_REQUIRE(dim >= 1, "block width must be positive");
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  BlockParams p;
  p.wq = init_normal({dim, dim}, s, rng);
  p.wk = init_normal({dim, dim}, s, rng);
  p.wv = init_normal({dim, dim}, s, rng);
  p.ln_gamma = init_constant({dim}, 1.0);
  p.ln_beta = init_constant({dim}, 0.0);
  p.ffn_w1 = init_normal({dim, 4 * dim}, s, rng);
  p.ffn_b1 = init_constant({4 * dim}, 0.0);
  p.ffn_w2 = init_normal({4 * dim, dim}, 0.5 / std::sqrt(static_cast<double>(4 * dim)), rng);
  p.ffn_b2 = init_constant({dim}, 0.0);
  return p;
}

void BlockParams::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + "wq", &wq, true});
  out.push_back({prefix + "wk", &wk, true});
  out.push_back({prefix + "wv", &wv, true});
  out.push_back({prefix + "ln_gamma", &ln_gamma, false});
  out.push_back({prefix + "ln_beta", &ln_beta, false});
  out.push_back({prefix + "ffn_w1", &ffn_w1, true});
  out.push_back({prefix + "ffn_b1", &ffn_b1, false});
  out.push_back({prefix + "ffn_w2", &ffn_w2, true});
  out.push_back({prefix + "ffn_b2", &ffn_b2, false});
}

Tensor feed_forward(const BlockParams& p, const Tensor& x) {
  return ops::linear(ops::gelu(ops::linear(x, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2);
}

Tensor attention_block(const BlockParams& p, const Tensor& queries, const Tensor& keys, std::size_t heads,
                       std::vector<double>* probs_out) {
  DRAT_REQUIRE(queries.rank() == 2 && keys.rank() == 2 && queries.dim(1) == p.dim() && keys.dim(1) == p.dim(),
               "attention_block token width does not match block width");
  const auto q = ops::matmul(queries, p.wq);
  const auto k = ops::matmul(keys, p.wk);
  const auto v = ops::matmul(keys, p.wv);
  const auto x = ops::add(queries, ops::attention(q, k, v, heads, probs_out));
  return ops::add(x, feed_forward(p, ops::layer_norm(x, p.ln_gamma, p.ln_beta)));
}

}  // namespace drat
