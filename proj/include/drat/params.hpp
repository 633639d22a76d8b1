// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "drat/rng.hpp"
#include "drat/tensor.hpp"

namespace drat {

/// Named handle to a trainable tensor. `decay` marks weights that receive
/// decoupled weight decay (matrices and kernels, not biases or norms).
struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
  bool decay = false;
};

using ParamList = std::vector<ParamRef>;

/// N(0, stddev^2) leaf.
Tensor init_normal(Shape shape, double stddev, Rng& rng);
Tensor init_constant(Shape shape, double value);

/// Copies values (not history) from `src` into `dst`; names and shapes must agree.
void copy_values(const ParamList& src, const ParamList& dst);

std::size_t parameter_count(const ParamList& params);

}  // namespace drat
