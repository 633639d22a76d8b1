// SPDX-License-Identifier: Apache-2.0
#include "drat/backbone.hpp"

#include <cmath>

#include "drat/ops.hpp"

namespace drat {

BackboneStub BackboneStub::create(std::size_t channels, std::uint64_t seed) {
  DRAT_REQUIRE(channels >= 1, "backbone needs C >= 1");
  Rng rng(seed);
  const auto stage = [&rng](std::size_t out, std::size_t in) {
    // Slightly above unit gain so blob edges saturate the tanh a little.
    return init_normal({out, in, 1, 2, 2}, 1.5 / std::sqrt(static_cast<double>(in * 4)), rng);
  };
  BackboneStub b;
  b.stage1 = stage(channels, 3);
  b.stage2 = stage(2 * channels, channels);
  b.stage3 = stage(4 * channels, 2 * channels);
  return b;
}

void BackboneStub::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + "stage1", &stage1, true});
  out.push_back({prefix + "stage2", &stage2, true});
  out.push_back({prefix + "stage3", &stage3, true});
}

BackboneStub::Features BackboneStub::forward(const Tensor& video) const {
  DRAT_REQUIRE(video.rank() == 4 && video.dim(0) == 3, "backbone expects 3 x T x H x W, got " + shape_str(video.shape()));
  DRAT_REQUIRE(video.dim(2) % 8 == 0 && video.dim(3) % 8 == 0, "backbone needs H and W divisible by 8");
  const ops::Stride3 s{1, 2, 2};
  Features f;
  f.f_a = ops::tanh(ops::conv3d(video, stage1, s));
  const auto mid = ops::tanh(ops::conv3d(f.f_a, stage2, s));
  f.f_b = ops::tanh(ops::conv3d(mid, stage3, s));
  return f;
}

}  // namespace drat
