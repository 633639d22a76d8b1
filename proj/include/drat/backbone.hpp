// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "drat/params.hpp"
#include "drat/tensor.hpp"

namespace drat {

/// Fixed, seeded stand-in for a pretrained video backbone: three
/// spatial-downsampling conv stages (kernel 1x2x2, stride 1x2x2) with tanh.
/// 3 x T x H x W  ->  F_a: C x T x H/2 x W/2  ->  F_b: 4C x T x H/8 x W/8.
struct BackboneStub {
  Tensor stage1;  // C x 3 x 1 x 2 x 2
  Tensor stage2;  // 2C x C x 1 x 2 x 2
  Tensor stage3;  // 4C x 2C x 1 x 2 x 2

  static BackboneStub create(std::size_t channels, std::uint64_t seed);

  std::size_t channels() const { return stage1.dim(0); }
  void collect(const std::string& prefix, ParamList& out);

  struct Features {
    Tensor f_a;
    Tensor f_b;
  };
  Features forward(const Tensor& video) const;
};

}  // namespace drat
