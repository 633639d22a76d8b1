// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>

#include "drat/deformable.hpp"

namespace drat {

enum class ModalMode { None, Single, Cross };

std::string_view modal_mode_name(ModalMode m);
ModalMode parse_modal_mode(std::string_view name);

/// Which transformer sub-blocks run inside each layer.
struct BlockSwitches {
  bool deformable = true;
  bool joint = true;
  bool temporal = true;
  bool operator==(const BlockSwitches&) const = default;
};

struct ModelConfig {
  // Extents. H and W are the video size; token grids derive from them.
  std::size_t C = 8, T = 12, H = 32, W = 32, R = 5;
  std::size_t L = 2;
  std::size_t heads = 4;
  std::size_t kernel = 2;
  std::size_t offset_stride = 2;
  double offset_range = 0.5;
  // 0 selects the default: joint min(R, 4), temporal min(T, 4), strides wnd/2.
  std::size_t wnd_joint = 0, wnd_temp = 0;
  std::size_t stride_joint = 0, stride_temp = 0;
  double sigma = 1.0;
  std::size_t num_classes = 4;

  ModalMode modal = ModalMode::Cross;
  BlockSwitches blocks;
  bool trainable_backbone = false;

  // Optimization.
  double lr = 2e-3;
  double weight_decay = 0.05;
  std::size_t warmup_steps = 0;  // 0 selects 5% of total_steps
  std::size_t total_steps = 2000;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;

  std::size_t dim() const { return 4 * C; }
  std::size_t grid_h() const { return H / 8; }
  std::size_t grid_w() const { return W / 8; }
  deform::GridExtents rgb_grid() const { return {T, H / 8, W / 8}; }
  deform::AttentionConfig attention() const { return {heads, kernel, offset_stride, offset_range}; }
  std::size_t joint_window() const;
  std::size_t temporal_window() const;
  std::size_t joint_stride() const;
  std::size_t temporal_stride() const;
  std::size_t warmup() const;

  /// Throws ContractViolation on any inconsistent setting.
  void validate() const;
};

/// Parses a JSON object; every key is optional, unknown keys are rejected.
/// Keys that were present are reported through `present` when non-null.
ModelConfig parse_config(std::string_view json_text, std::set<std::string>* present = nullptr);
ModelConfig parse_config(std::string_view json_text, const ModelConfig& defaults, std::set<std::string>* present);
std::string config_to_json(const ModelConfig& cfg, int indent = 1);

}  // namespace drat
