// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "drat/gradcheck.hpp"
#include "drat/pose.hpp"
#include "test_util.hpp"

using namespace drat;
using namespace drat::pose;
using drat::testutil::random_tensor;

namespace {

synth::SkeletonSequence single_joint(double x, double y) {
  synth::SkeletonSequence s(1, 1);
  s.set(0, 0, x, y);
  return s;
}

synth::SkeletonSequence random_skeleton(std::size_t frames, std::size_t joints, std::size_t grid, Rng& rng) {
  synth::SkeletonSequence s(frames, joints);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t r = 0; r < joints; ++r) s.set(t, r, rng.uniform(0, grid - 1), rng.uniform(0, grid - 1));
  return s;
}

}  // namespace

TEST(Heatmap, PeakAndUnitNeighbour) {
  auto hm = gaussian_heatmap(single_joint(3, 4), 1.0, 8, 8);
  // values(t, r, j, i): j is the row (y), i the column (x).
  EXPECT_DOUBLE_EQ(hm.values.at({0, 0, 4, 3}), 1.0);
  EXPECT_NEAR(hm.values.at({0, 0, 4, 4}), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(hm.values.at({0, 0, 4, 4}), 0.60653, 1e-5);
}

TEST(Heatmap, NarrowSigmaConcentratesMass) {
  auto hm = gaussian_heatmap(single_joint(3, 4), 0.1, 8, 8);
  double off = 0.0;
  for (std::size_t j = 0; j < 8; ++j)
    for (std::size_t i = 0; i < 8; ++i)
      if (i != 3 || j != 4) off += hm.values.at({0, 0, j, i});
  EXPECT_LT(off, 1e-6);
}

TEST(Heatmap, RejectsNonPositiveSigma) {
  EXPECT_THROW(gaussian_heatmap(single_joint(1, 1), 0.0, 4, 4), ContractViolation);
}

TEST(PoseTokens, ConstantFeaturesGiveHeatmapSum) {
  Rng rng(1);
  auto skel = random_skeleton(2, 3, 8, rng);
  auto hm = gaussian_heatmap(skel, 1.3, 8, 8);
  auto raw = pool_joint_features(Tensor::full({4, 2, 8, 8}, 1.0), hm);
  ASSERT_EQ(raw.shape(), (Shape{6, 4}));
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 8; ++j)
        for (std::size_t i = 0; i < 8; ++i) sum += hm.values.at({t, r, j, i});
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(raw.at({t * 3 + r, c}), sum, 1e-12);
    }
}

TEST(PoseTokens, ZeroFeaturesGiveProjectionBias) {
  Rng rng(2);
  auto proj = PoseProjection::create(4, rng);
  auto bias = random_tensor({16}, rng);
  proj.bias = bias;
  auto hm = gaussian_heatmap(random_skeleton(2, 2, 8, rng), 1.0, 8, 8);
  auto p = pose_tokens(Tensor::zeros({4, 2, 8, 8}), hm, proj);
  ASSERT_EQ(p.shape(), (Shape{4, 16}));
  for (std::size_t row = 0; row < 4; ++row)
    for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(p.at({row, c}), bias.data()[c]);
}

TEST(PoseTokens, NarrowHeatmapSamplesThePixel) {
  Rng rng(3);
  auto f_a = random_tensor({4, 1, 8, 8}, rng, false, 0.5, 1.5);
  auto raw = pool_joint_features(f_a, gaussian_heatmap(single_joint(5, 2), 0.2, 8, 8));
  for (std::size_t c = 0; c < 4; ++c) {
    const double want = f_a.at({c, 0, 2, 5});
    EXPECT_LT(std::abs(raw.at({0, c}) - want) / want, 0.01);
  }
}

TEST(PoseTokens, LinearInFeatures) {
  Rng rng(4);
  auto hm = gaussian_heatmap(random_skeleton(2, 3, 8, rng), 1.0, 8, 8);
  auto a = random_tensor({3, 2, 8, 8}, rng), b = random_tensor({3, 2, 8, 8}, rng);
  const double alpha = 0.7, beta = -1.9;
  auto combo = ops::add(ops::scale(a, alpha), ops::scale(b, beta));
  auto lhs = pool_joint_features(combo, hm);
  auto rhs = ops::add(ops::scale(pool_joint_features(a, hm), alpha), ops::scale(pool_joint_features(b, hm), beta));
  EXPECT_LT(testutil::max_abs_diff(lhs, rhs), 1e-12);
}

TEST(PoseTokens, JointPermutationPermutesTokens) {
  Rng rng(5);
  auto skel = random_skeleton(2, 4, 8, rng);
  std::vector<std::size_t> order{2, 0, 3, 1};
  auto f_a = random_tensor({3, 2, 8, 8}, rng);
  auto base = pool_joint_features(f_a, gaussian_heatmap(skel, 1.0, 8, 8));
  auto perm = pool_joint_features(f_a, gaussian_heatmap(skel.permute_joints(order), 1.0, 8, 8));
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(perm.at({t * 4 + r, c}), base.at({t * 4 + order[r], c}));
}

TEST(PoseTokens, GradcheckInFeatures) {
  Rng rng(6);
  auto hm = gaussian_heatmap(random_skeleton(2, 2, 4, rng), 1.0, 4, 4);
  auto w = random_tensor({4, 3}, rng);
  auto f_a = random_tensor({3, 2, 4, 4}, rng, true);
  EXPECT_LT(gradcheck([&](const Tensor& x) { return ops::sum(ops::mul(pool_joint_features(x, hm), w)); }, f_a), 1e-5);
}

TEST(PoseTokens, ChannelFirstLayout) {
  Rng rng(7);
  auto tokens = random_tensor({6, 4}, rng);
  auto cf = to_channel_first(tokens, 2, 3);
  ASSERT_EQ(cf.shape(), (Shape{4, 2, 3}));
  EXPECT_EQ(cf.at({1, 1, 2}), tokens.at({5, 1}));
}

TEST(PoseTokens, RejectsMismatchedGrid) {
  Rng rng(8);
  auto hm = gaussian_heatmap(random_skeleton(2, 2, 8, rng), 1.0, 8, 8);
  EXPECT_THROW(pool_joint_features(Tensor::zeros({3, 2, 4, 4}), hm), ContractViolation);
  EXPECT_THROW(pool_joint_features(Tensor::zeros({3, 3, 8, 8}), hm), ContractViolation);
}
