// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "drat/block.hpp"
#include "drat/tensor.hpp"
#include "drat/trace.hpp"

namespace drat::stride {

/// Query and key/value window starts along one axis.
struct WindowPlan {
  std::size_t axis_length = 0;
  std::size_t wnd = 0;
  std::size_t stride = 0;
  std::vector<std::size_t> query_starts;
  std::vector<std::size_t> kv_starts;

  /// Key/value window used by query window j: min(j, |kv| - 1).
  std::size_t pairing(std::size_t j) const;
};

/// Half-window stride, max(1, wnd / 2).
WindowPlan window_starts(std::size_t axis_length, std::size_t wnd);

/// Query starts 0, s, 2s, ... while they fit, plus a final start at
/// length - wnd when the tail is otherwise uncovered. Key/value starts
/// s, 2s, ... while they fit (tail appended likewise), or {0} when none fit.
WindowPlan window_starts(std::size_t axis_length, std::size_t wnd, std::size_t stride);

struct StrideOutput {
  Tensor main;
  std::vector<Tensor> modal;
};

/// Windowed attention over the joint axis. P is (T*R) x D with row t*R + r;
/// every modal tensor is T x D and joins every window. Overlapping outputs
/// are averaged.
StrideOutput joint_stride_attention(const Tensor& p, std::size_t frames, std::span<const Tensor> modal,
                                    const BlockParams& params, const WindowPlan& plan, std::size_t heads,
                                    ForwardTrace* trace = nullptr);

/// Windowed attention over time on the per-frame concatenation of `groups`.
/// Group g is (T * n_g) x D with row t * n_g + k; tokens per frame
/// D_n = sum of n_g. Returns the groups in the same layout.
std::vector<Tensor> temporal_stride_attention(std::span<const Tensor> groups, std::size_t frames,
                                              const BlockParams& params, const WindowPlan& plan, std::size_t heads,
                                              ForwardTrace* trace = nullptr);

}  // namespace drat::stride
