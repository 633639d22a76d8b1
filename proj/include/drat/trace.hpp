// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace drat {

/// One attention call's probabilities, heads x queries x keys.
struct AttentionMap {
  std::string block;
  std::size_t layer = 0;
  std::size_t window = 0;
  std::size_t heads = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<double> probs;
};

/// Deformed sampling locations of one layer, normalized to [-1, 1].
struct DeformedPoints {
  std::size_t layer = 0;
  std::size_t t = 0, h = 0, w = 0;
  std::vector<double> xyz;  // (t*h*w) x 3, channel order x, y, z
};

/// Attention received by each joint over time in one layer, R x T.
struct JointSeries {
  std::size_t layer = 0;
  std::size_t joints = 0, frames = 0;
  std::vector<double> values;
};

/// Optional side channel filled during a forward pass for inspection.
struct ForwardTrace {
  std::size_t layer = 0;
  std::vector<AttentionMap> maps;
  std::vector<DeformedPoints> points;
  std::vector<JointSeries> joint_series;
};

}  // namespace drat
