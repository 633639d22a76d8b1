// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "drat/backbone.hpp"
#include "drat/block.hpp"
#include "drat/config.hpp"
#include "drat/deformable.hpp"
#include "drat/pose.hpp"
#include "drat/synth.hpp"
#include "drat/trace.hpp"

namespace drat {

struct LayerParams {
  deform::DeformableParams deformable;
  BlockParams joint;
  Tensor fuse_w, fuse_b;  // 2D x D, D
  BlockParams temporal;
};

/// Cross-modal tokens, each T x D (one token per time step). In single-token
/// mode only `cls` is used.
struct ModalTokens {
  Tensor cls, rgb, pose;
};

struct ModelParams {
  BackboneStub backbone;
  pose::PoseProjection pose;
  Tensor pos_embedding;  // (T*h*w) x D
  ModalTokens modal;
  std::vector<LayerParams> layers;
  Tensor head_w, head_b;  // head_in x K, K

  static ModelParams create(const ModelConfig& cfg);

  /// Every tensor, in a fixed order (used for checkpoints).
  ParamList all();
  /// Tensors updated by the optimizer; the backbone only when trainable.
  ParamList trainable(const ModelConfig& cfg);
};

/// Input width of the classification head for a modal-token mode.
std::size_t head_width(const ModelConfig& cfg);

/// Backbone and pose-pooling outputs for one clip. `rgb` is the F_b token
/// matrix ((T*h*w) x D, row t*h*w + y*w + x); `raw_pose` the pooled joint
/// features ((T*R) x C, row t*R + r).
struct ClipFeatures {
  Tensor rgb;
  Tensor raw_pose;
};

ClipFeatures extract_features(const Tensor& video, const synth::SkeletonSequence& skeleton, const ModelConfig& cfg,
                              const ModelParams& params);

/// Logits [1, K].
Tensor forward_features(const ClipFeatures& features, const ModelConfig& cfg, const ModelParams& params,
                        ForwardTrace* trace = nullptr);

Tensor forward(const synth::SyntheticClip& clip, const ModelConfig& cfg, const ModelParams& params,
               ForwardTrace* trace = nullptr);

}  // namespace drat
