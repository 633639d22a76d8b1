// SPDX-License-Identifier: Apache-2.0
#include "drat/pose.hpp"

#include <cmath>

#include "drat/ops.hpp"

namespace drat::pose {

JointHeatmap gaussian_heatmap(const synth::SkeletonSequence& skeleton, double sigma, std::size_t grid_h,
                              std::size_t grid_w) {
  DRAT_REQUIRE(sigma > 0.0 && std::isfinite(sigma), "heatmap sigma must be positive");
  DRAT_REQUIRE(grid_h >= 1 && grid_w >= 1, "heatmap grid must be non-empty");
  const std::size_t T = skeleton.frames(), R = skeleton.joints();
  std::vector<double> v(T * R * grid_h * grid_w);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::size_t o = 0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t r = 0; r < R; ++r) {
      const double x = skeleton.x(t, r), y = skeleton.y(t, r);
      for (std::size_t j = 0; j < grid_h; ++j) {
        const double dy = static_cast<double>(j) - y;
        for (std::size_t i = 0; i < grid_w; ++i) {
          const double dx = static_cast<double>(i) - x;
          v[o++] = std::exp(-(dx * dx + dy * dy) * inv);
        }
      }
    }
  }
  return {Tensor::from({T, R, grid_h, grid_w}, std::move(v)), sigma};
}

Tensor pool_joint_features(const Tensor& f_a, const JointHeatmap& heatmap) {
  const Tensor& h = heatmap.values;
  DRAT_REQUIRE(f_a.rank() == 4 && h.rank() == 4, "pool_joint_features expects rank-4 F_a and heatmap");
  DRAT_REQUIRE(f_a.dim(1) == h.dim(0) && f_a.dim(2) == h.dim(2) && f_a.dim(3) == h.dim(3),
               "F_a " + shape_str(f_a.shape()) + " does not match heatmap " + shape_str(h.shape()));
  require_finite(f_a.data(), "pool_joint_features");
  const std::size_t C = f_a.dim(0), T = h.dim(0), R = h.dim(1), P = h.dim(2) * h.dim(3);
  auto fa = f_a.data();
  auto hv = h.data();
  std::vector<double> out(T * R * C, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t r = 0; r < R; ++r) {
      const double* hw = hv.data() + (t * R + r) * P;
      for (std::size_t c = 0; c < C; ++c) {
        const double* f = fa.data() + (c * T + t) * P;
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) s += f[p] * hw[p];
        out[(t * R + r) * C + c] = s;
      }
    }
  auto src = f_a.node();
  auto heat = h.node();
  return make_result({T * R, C}, std::move(out), {f_a}, [src, heat, C, T, R, P](const Node& self) {
    auto g = src->grad_buffer();
    const auto& hv = heat->data;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t r = 0; r < R; ++r) {
        const double* hw = hv.data() + (t * R + r) * P;
        for (std::size_t c = 0; c < C; ++c) {
          const double go = self.grad[(t * R + r) * C + c];
          double* gf = g.data() + (c * T + t) * P;
          for (std::size_t p = 0; p < P; ++p) gf[p] += go * hw[p];
        }
      }
  });
}

PoseProjection PoseProjection::create(std::size_t channels, Rng& rng) {
  PoseProjection p;
  p.weight = init_normal({channels, 4 * channels}, 0.02, rng);
  p.bias = init_normal({4 * channels}, 0.02, rng);
  return p;
}

void PoseProjection::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + "weight", &weight, true});
  out.push_back({prefix + "bias", &bias, false});
}

Tensor pose_tokens(const Tensor& f_a, const JointHeatmap& heatmap, const PoseProjection& projection) {
  DRAT_REQUIRE(projection.weight.dim(0) == f_a.dim(0), "pose projection input width does not match F_a channels");
  return projection.apply(pool_joint_features(f_a, heatmap));
}

Tensor to_channel_first(const Tensor& tokens, std::size_t frames, std::size_t joints) {
  DRAT_REQUIRE(tokens.rank() == 2 && tokens.dim(0) == frames * joints, "token matrix does not match T*R");
  return ops::transpose(tokens).reshape({tokens.dim(1), frames, joints});
}

}  // namespace drat::pose
