// SPDX-License-Identifier: Apache-2.0
#include "drat/params.hpp"

#include <algorithm>

namespace drat {

Tensor init_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor init_constant(Shape shape, double value) { return Tensor::full(std::move(shape), value, true); }

void copy_values(const ParamList& src, const ParamList& dst) {
  DRAT_REQUIRE(src.size() == dst.size(), "parameter lists differ in length");
  for (std::size_t i = 0; i < src.size(); ++i) {
    DRAT_REQUIRE(src[i].name == dst[i].name && src[i].tensor->shape() == dst[i].tensor->shape(),
                 "parameter mismatch at " + src[i].name);
    auto from = src[i].tensor->data();
    std::copy(from.begin(), from.end(), dst[i].tensor->data_mut().begin());
  }
}

std::size_t parameter_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor->size();
  return n;
}

}  // namespace drat
