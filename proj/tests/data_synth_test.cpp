// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include "drat/backbone.hpp"
#include "drat/synth.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace drat;
using namespace drat::synth;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("drat_synth_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Synth, TranslateRightMovesEveryJointRight) {
  ClipSpec spec;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto clip = make_clip(Motion::TranslateRight, spec, seed);
    for (std::size_t t = 1; t < spec.frames; ++t)
      for (std::size_t r = 0; r < spec.joints; ++r)
        EXPECT_GT(clip.skeleton.x(t, r), clip.skeleton.x(t - 1, r)) << "seed " << seed << " t " << t << " r " << r;
  }
}

TEST(Synth, SkeletonsStayInsideTheFeatureGrid) {
  ClipSpec spec;
  for (std::size_t m = 0; m < kMotionCount; ++m)
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto clip = make_clip(static_cast<Motion>(m), spec, seed);
      EXPECT_NO_THROW(clip.skeleton.check_bounds(spec.height / 2, spec.width / 2));
      EXPECT_EQ(clip.label, static_cast<int>(m));
      EXPECT_EQ(clip.video.shape(), (Shape{3, spec.frames, spec.height, spec.width}));
    }
}

TEST(Synth, ClipIsAFunctionOfItsSeed) {
  ClipSpec spec;
  auto a = make_clip(Motion::Expand, spec, 7), b = make_clip(Motion::Expand, spec, 7);
  auto c = make_clip(Motion::Expand, spec, 8);
  EXPECT_EQ(testutil::max_abs_diff(a.video, b.video), 0.0);
  EXPECT_GT(testutil::max_abs_diff(a.video, c.video), 0.0);
}

TEST(Synth, CheckBoundsRejectsOutsideJoints) {
  SkeletonSequence s(1, 1);
  s.set(0, 0, 16.0, 3.0);
  EXPECT_THROW(s.check_bounds(16, 16), ContractViolation);
  s.set(0, 0, 15.9, 3.0);
  EXPECT_NO_THROW(s.check_bounds(16, 16));
}

TEST(Synth, SkeletonJsonRoundTrip) {
  auto clip = make_clip(Motion::OrbitClockwise, ClipSpec{}, 3);
  auto back = SkeletonSequence::from_json(clip.skeleton.to_json());
  ASSERT_EQ(back.frames(), clip.skeleton.frames());
  for (std::size_t t = 0; t < back.frames(); ++t)
    for (std::size_t r = 0; r < back.joints(); ++r) {
      EXPECT_EQ(back.x(t, r), clip.skeleton.x(t, r));
      EXPECT_EQ(back.y(t, r), clip.skeleton.y(t, r));
    }
  EXPECT_THROW(SkeletonSequence::from_json("{not json"), IoError);
}

TEST(Synth, SelectAndPermute) {
  SkeletonSequence s(3, 2);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t r = 0; r < 2; ++r) s.set(t, r, 10.0 * t + r, 0.0);
  std::vector<std::size_t> frames{2, 0}, order{1, 0};
  auto sel = s.select_frames(frames).permute_joints(order);
  EXPECT_EQ(sel.x(0, 0), 21.0);
  EXPECT_EQ(sel.x(1, 1), 0.0);
}

TEST(Synth, DatasetSplitAndByteIdenticalRerun) {
  GenerateOptions opt;
  opt.out_dir = scratch("a");
  generate_dataset(opt);
  auto entries = load_manifest(opt.out_dir);
  ASSERT_EQ(entries.size(), 200u);
  std::size_t train = 0;
  std::map<int, std::size_t> test_per_class;
  for (const auto& e : entries) {
    train += e.train;
    if (!e.train) ++test_per_class[e.label];
  }
  EXPECT_EQ(train, 160u);
  for (int c = 0; c < 4; ++c) EXPECT_EQ(test_per_class[c], 10u);

  auto info = load_dataset_info(opt.out_dir);
  EXPECT_EQ(info.num_classes, 4u);
  EXPECT_EQ(info.clip.frames, 12u);
  EXPECT_EQ(info.seed, 42u);

  auto other = opt;
  other.out_dir = scratch("b");
  generate_dataset(other);
  for (const auto& entry : fs::recursive_directory_iterator(opt.out_dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), opt.out_dir);
    EXPECT_EQ(slurp(entry.path()), slurp(other.out_dir / rel)) << rel;
  }

  auto clip = load_clip(entries[0]);
  EXPECT_EQ(clip.video.shape(), (Shape{3, 12, 32, 32}));
  fs::remove_all(opt.out_dir);
  fs::remove_all(other.out_dir);
}

TEST(Synth, RejectsBadOptions) {
  GenerateOptions opt;
  opt.out_dir = scratch("bad");
  opt.num_classes = 9;
  EXPECT_THROW(generate_dataset(opt), ContractViolation);
  opt.num_classes = 4;
  opt.samples_per_class = 0;
  EXPECT_THROW(generate_dataset(opt), ContractViolation);
  EXPECT_THROW(load_manifest(scratch("missing")), IoError);
}

TEST(Backbone, FeatureShapes) {
  auto stub = BackboneStub::create(8, 1);
  auto clip = make_clip(Motion::TranslateLeft, ClipSpec{}, 1);
  auto f = stub.forward(clip.video);
  EXPECT_EQ(f.f_a.shape(), (Shape{8, 12, 16, 16}));
  EXPECT_EQ(f.f_b.shape(), (Shape{32, 12, 4, 4}));
}

TEST(Backbone, ZeroVideoGivesZeroFeatures) {
  auto stub = BackboneStub::create(4, 2);
  auto f = stub.forward(Tensor::zeros({3, 2, 16, 16}));
  for (double v : f.f_a.data()) EXPECT_EQ(v, 0.0);
  for (double v : f.f_b.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, SeedsGiveDifferentFeatures) {
  auto clip = make_clip(Motion::TranslateUp, ClipSpec{}, 4);
  auto a = BackboneStub::create(8, 1).forward(clip.video).f_b;
  auto b = BackboneStub::create(8, 2).forward(clip.video).f_b;
  EXPECT_GT(testutil::max_abs_diff(a, b), 1e-3);
}

TEST(Backbone, RejectsIndivisibleExtents) {
  auto stub = BackboneStub::create(4, 1);
  EXPECT_THROW(stub.forward(Tensor::zeros({3, 2, 12, 16})), ContractViolation);
}
