// SPDX-License-Identifier: Apache-2.0
#include "drat/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace drat {

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard no_grad;
  const Tensor y = f();
  DRAT_REQUIRE(y.size() == 1, "gradcheck: function must be scalar-valued");
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericError("gradcheck: non-finite function value");
  return v;
}

}  // namespace

GradcheckResult gradcheck(const std::function<Tensor()>& f, std::span<Tensor> leaves, double step) {
  DRAT_REQUIRE(step >= 1e-6 && step <= 1e-3, "gradcheck: step must lie in [1e-6, 1e-3]");
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  const Tensor y = f();
  DRAT_REQUIRE(y.size() == 1, "gradcheck: function must be scalar-valued");
  y.backward();

  GradcheckResult result;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Tensor& leaf = leaves[l];
    std::vector<double> analytic(leaf.size(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    auto values = leaf.data_mut();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = eval_scalar(f);
      values[i] = saved - step;
      const double down = eval_scalar(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-8});
      result.max_absolute_error = std::max(result.max_absolute_error, abs_err);
      if (rel > result.max_relative_error || result.components == 0) {
        result.max_relative_error = rel;
        result.worst_leaf = l;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
      ++result.components;
    }
  }
  return result;
}

double gradcheck(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step) {
  Tensor leaves[] = {x};
  return gradcheck([&] { return f(x); }, leaves, step).max_relative_error;
}

}  // namespace drat
