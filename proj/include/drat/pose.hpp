// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "drat/ops.hpp"
#include "drat/params.hpp"
#include "drat/synth.hpp"
#include "drat/tensor.hpp"

namespace drat::pose {

struct JointHeatmap {
  Tensor values;  // T x R x grid_h x grid_w
  double sigma = 1.0;
};

/// values(t,r,j,i) = exp(-((i-x)^2 + (j-y)^2) / (2 sigma^2)); unnormalized.
JointHeatmap gaussian_heatmap(const synth::SkeletonSequence& skeleton, double sigma, std::size_t grid_h,
                              std::size_t grid_w);

/// Heatmap-weighted sums of F_a (C x T x gh x gw) per joint, returned
/// token-major as (T*R) x C with row t*R + r. Differentiable in F_a.
Tensor pool_joint_features(const Tensor& f_a, const JointHeatmap& heatmap);

/// Learned C -> 4C projection applied to pooled joint features.
struct PoseProjection {
  Tensor weight;  // C x 4C
  Tensor bias;    // 4C

  static PoseProjection create(std::size_t channels, Rng& rng);
  void collect(const std::string& prefix, ParamList& out);
  Tensor apply(const Tensor& raw) const { return ops::linear(raw, weight, bias); }
};

/// Pose tokens P as a (T*R) x 4C token matrix.
Tensor pose_tokens(const Tensor& f_a, const JointHeatmap& heatmap, const PoseProjection& projection);

/// (T*R) x D token matrix -> D x T x R tensor.
Tensor to_channel_first(const Tensor& tokens, std::size_t frames, std::size_t joints);

}  // namespace drat::pose
