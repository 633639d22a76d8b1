// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "drat/tensor.hpp"

namespace drat::synth {

/// Per-frame joint coordinates in the pixel space of the F_a grid
/// (H/2 x W/2). x indexes columns, y indexes rows.
class SkeletonSequence {
 public:
  SkeletonSequence() = default;
  SkeletonSequence(std::size_t frames, std::size_t joints);

  std::size_t frames() const { return frames_; }
  std::size_t joints() const { return joints_; }

  double x(std::size_t t, std::size_t r) const { return coords_[(t * joints_ + r) * 2]; }
  double y(std::size_t t, std::size_t r) const { return coords_[(t * joints_ + r) * 2 + 1]; }
  void set(std::size_t t, std::size_t r, double x, double y);

  /// Throws ContractViolation unless every joint lies in [0, grid_w) x [0, grid_h).
  void check_bounds(std::size_t grid_h, std::size_t grid_w) const;

  /// Frames re-indexed by `frame_index` (used for temporal resampling).
  SkeletonSequence select_frames(std::span<const std::size_t> frame_index) const;
  /// Joint order permuted: joint r of the result is joint order[r] of this.
  SkeletonSequence permute_joints(std::span<const std::size_t> order) const;

  std::string to_json() const;
  static SkeletonSequence from_json(std::string_view text);

 private:
  std::size_t frames_ = 0;
  std::size_t joints_ = 0;
  std::vector<double> coords_;
};

enum class Motion : int {
  TranslateLeft = 0,
  TranslateRight,
  TranslateUp,
  TranslateDown,
  OrbitClockwise,
  OrbitCounterClockwise,
  Expand,
  Contract,
};

inline constexpr std::size_t kMotionCount = 8;
std::string_view motion_name(Motion m);

struct SyntheticClip {
  Tensor video;  // 3 x T x H x W
  SkeletonSequence skeleton;
  int label = 0;
};

struct ClipSpec {
  std::size_t frames = 12;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t joints = 5;
};

/// Renders one clip of an articulated blob figure following `motion`.
/// Everything random is drawn from `seed`.
SyntheticClip make_clip(Motion motion, const ClipSpec& spec, std::uint64_t seed);

struct GenerateOptions {
  std::filesystem::path out_dir;
  std::size_t num_classes = 4;
  std::size_t samples_per_class = 50;
  ClipSpec clip;
  std::uint64_t seed = 42;
};

struct DatasetEntry {
  std::filesystem::path video;
  std::filesystem::path skeleton;
  int label = 0;
  bool train = true;
};

struct DatasetInfo {
  std::size_t num_classes = 0;
  std::size_t samples_per_class = 0;
  ClipSpec clip;
  std::uint64_t seed = 0;
};

/// Writes clips (TNSR, f32), skeletons (JSON), manifest.json and dataset.json.
/// A pure function of the options: reruns produce identical bytes.
void generate_dataset(const GenerateOptions& options);

/// Reads manifest.json; paths are resolved against `dir`.
std::vector<DatasetEntry> load_manifest(const std::filesystem::path& dir);
DatasetInfo load_dataset_info(const std::filesystem::path& dir);
SyntheticClip load_clip(const DatasetEntry& entry);

}  // namespace drat::synth
