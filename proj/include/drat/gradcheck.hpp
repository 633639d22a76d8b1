// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "drat/tensor.hpp"

namespace drat {

inline constexpr double kDefaultGradcheckStep = 1e-5;

struct GradcheckResult {
  /// max over components of |a - n| / max(|a|, |n|, 1e-8)
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t components = 0;
  // Location of the worst relative error.
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `f` is re-evaluated with each leaf component perturbed in
/// place; leaves are restored afterwards. Step must lie in [1e-6, 1e-3].
GradcheckResult gradcheck(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                          double step = kDefaultGradcheckStep);

/// Single-input form: returns the max relative error.
double gradcheck(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step = kDefaultGradcheckStep);

}  // namespace drat
