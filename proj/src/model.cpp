// SPDX-License-Identifier: Apache-2.0
#include "drat/model.hpp"

#include <cmath>

#include "drat/ops.hpp"
#include "drat/stride.hpp"

namespace drat {

std::size_t head_width(const ModelConfig& cfg) {
  switch (cfg.modal) {
    case ModalMode::None: return 2 * cfg.dim();
    case ModalMode::Single: return cfg.dim();
    case ModalMode::Cross: return 3 * cfg.dim();
  }
  return 3 * cfg.dim();
}

ModelParams ModelParams::create(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t D = cfg.dim(), T = cfg.T;
  ModelParams p;
  p.backbone = BackboneStub::create(cfg.C, Rng::derive(cfg.seed, 1).next_u64());
  Rng rng = Rng::derive(cfg.seed, 2);
  p.pose = pose::PoseProjection::create(cfg.C, rng);
  p.pos_embedding = init_normal({cfg.rgb_grid().count(), D}, 0.02, rng);
  p.modal.cls = init_normal({T, D}, 0.02, rng);
  p.modal.rgb = init_normal({T, D}, 0.02, rng);
  p.modal.pose = init_normal({T, D}, 0.02, rng);
  for (std::size_t l = 0; l < cfg.L; ++l) {
    LayerParams layer;
    layer.deformable = deform::DeformableParams::create(D, cfg.kernel, rng);
    layer.joint = BlockParams::create(D, rng);
    layer.fuse_w = init_normal({2 * D, D}, 1.0 / std::sqrt(static_cast<double>(2 * D)), rng);
    layer.fuse_b = init_constant({D}, 0.0);
    layer.temporal = BlockParams::create(D, rng);
    p.layers.push_back(std::move(layer));
  }
  p.head_w = init_normal({head_width(cfg), cfg.num_classes}, 1.0 / std::sqrt(static_cast<double>(head_width(cfg))), rng);
  p.head_b = init_constant({cfg.num_classes}, 0.0);
  return p;
}

ParamList ModelParams::all() {
  ParamList out;
  backbone.collect("backbone.", out);
  pose.collect("pose.", out);
  out.push_back({"pos_embedding", &pos_embedding, false});
  out.push_back({"modal.cls", &modal.cls, false});
  out.push_back({"modal.rgb", &modal.rgb, false});
  out.push_back({"modal.pose", &modal.pose, false});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    layers[l].deformable.collect(pre + "deformable.", out);
    layers[l].joint.collect(pre + "joint.", out);
    out.push_back({pre + "fuse_w", &layers[l].fuse_w, true});
    out.push_back({pre + "fuse_b", &layers[l].fuse_b, false});
    layers[l].temporal.collect(pre + "temporal.", out);
  }
  out.push_back({"head_w", &head_w, true});
  out.push_back({"head_b", &head_b, false});
  return out;
}

ParamList ModelParams::trainable(const ModelConfig& cfg) {
  ParamList out;
  for (auto& p : all())
    if (cfg.trainable_backbone || p.name.rfind("backbone.", 0) != 0) out.push_back(p);
  return out;
}

ClipFeatures extract_features(const Tensor& video, const synth::SkeletonSequence& skeleton, const ModelConfig& cfg,
                              const ModelParams& params) {
  DRAT_REQUIRE(video.rank() == 4 && video.dim(1) == cfg.T && video.dim(2) == cfg.H && video.dim(3) == cfg.W,
               "clip " + shape_str(video.shape()) + " does not match the configured T x H x W");
  DRAT_REQUIRE(skeleton.frames() == cfg.T && skeleton.joints() == cfg.R, "skeleton does not match configured T and R");
  const auto feats = params.backbone.forward(video);
  const auto heat = pose::gaussian_heatmap(skeleton, cfg.sigma, cfg.H / 2, cfg.W / 2);
  const std::size_t n = cfg.rgb_grid().count();
  return {ops::transpose(feats.f_b.reshape({cfg.dim(), n})), pose::pool_joint_features(feats.f_a, heat)};
}

namespace {

Tensor fuse(const LayerParams& layer, const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return ops::linear(ops::concat(parts, 1), layer.fuse_w, layer.fuse_b);
}

}  // namespace

Tensor forward_features(const ClipFeatures& features, const ModelConfig& cfg, const ModelParams& params,
                        ForwardTrace* trace) {
  const std::size_t T = cfg.T, D = cfg.dim();
  const auto grid = cfg.rgb_grid();
  DRAT_REQUIRE(features.rgb.rank() == 2 && features.rgb.dim(0) == grid.count() && features.rgb.dim(1) == D,
               "RGB tokens do not match the configuration");
  DRAT_REQUIRE(features.raw_pose.rank() == 2 && features.raw_pose.dim(0) == T * cfg.R &&
                   features.raw_pose.dim(1) == cfg.C,
               "pose features do not match the configuration");
  DRAT_REQUIRE(params.layers.size() == cfg.L, "parameter set has the wrong number of layers");
  const auto att = cfg.attention();
  const auto joint_plan = stride::window_starts(cfg.R, cfg.joint_window(), cfg.joint_stride());
  const auto time_plan = stride::window_starts(T, cfg.temporal_window(), cfg.temporal_stride());

  Tensor z = ops::add(features.rgb, params.pos_embedding);
  Tensor p = params.pose.apply(features.raw_pose);
  Tensor m_cls = params.modal.cls, m_rgb = params.modal.rgb, m_pose = params.modal.pose;

  for (std::size_t l = 0; l < cfg.L; ++l) {
    const auto& layer = params.layers[l];
    if (trace) trace->layer = l;
    switch (cfg.modal) {
      case ModalMode::Cross: {
        Tensor cls1 = m_cls;
        if (cfg.blocks.deformable) {
          const Tensor modal[] = {m_rgb, m_cls};
          auto out = deform::deformable_block(z, grid, modal, layer.deformable, att, trace);
          z = out.main;
          m_rgb = out.modal[0];
          cls1 = out.modal[1];
        }
        m_cls = cls1;
        if (cfg.blocks.joint) {
          const Tensor modal[] = {m_pose, cls1};
          auto out = stride::joint_stride_attention(p, T, modal, layer.joint, joint_plan, cfg.heads, trace);
          p = out.main;
          m_pose = out.modal[0];
          m_cls = fuse(layer, cls1, out.modal[1]);
        }
        if (cfg.blocks.temporal) {
          const Tensor groups[] = {z, p, m_rgb, m_pose, m_cls};
          auto out = stride::temporal_stride_attention(groups, T, layer.temporal, time_plan, cfg.heads, trace);
          z = out[0];
          p = out[1];
          m_rgb = out[2];
          m_pose = out[3];
          m_cls = out[4];
        }
        break;
      }
      case ModalMode::Single: {
        Tensor s1 = m_cls;
        if (cfg.blocks.deformable) {
          const Tensor modal[] = {m_cls};
          auto out = deform::deformable_block(z, grid, modal, layer.deformable, att, trace);
          z = out.main;
          s1 = out.modal[0];
        }
        m_cls = s1;
        if (cfg.blocks.joint) {
          const Tensor modal[] = {s1};
          auto out = stride::joint_stride_attention(p, T, modal, layer.joint, joint_plan, cfg.heads, trace);
          p = out.main;
          m_cls = fuse(layer, s1, out.modal[0]);
        }
        if (cfg.blocks.temporal) {
          const Tensor groups[] = {z, p, m_cls};
          auto out = stride::temporal_stride_attention(groups, T, layer.temporal, time_plan, cfg.heads, trace);
          z = out[0];
          p = out[1];
          m_cls = out[2];
        }
        break;
      }
      case ModalMode::None: {
        if (cfg.blocks.deformable) z = deform::deformable_block(z, grid, {}, layer.deformable, att, trace).main;
        if (cfg.blocks.joint) p = stride::joint_stride_attention(p, T, {}, layer.joint, joint_plan, cfg.heads, trace).main;
        if (cfg.blocks.temporal) {
          const Tensor groups[] = {z, p};
          auto out = stride::temporal_stride_attention(groups, T, layer.temporal, time_plan, cfg.heads, trace);
          z = out[0];
          p = out[1];
        }
        break;
      }
    }
  }

  Tensor pooled;
  switch (cfg.modal) {
    case ModalMode::Cross: {
      const Tensor parts[] = {m_cls, m_rgb, m_pose};
      pooled = ops::mean(ops::concat(parts, 1), 0);
      break;
    }
    case ModalMode::Single: pooled = ops::mean(m_cls, 0); break;
    case ModalMode::None: {
      const Tensor parts[] = {ops::mean(z, 0), ops::mean(p, 0)};
      pooled = ops::concat(parts, 0);
      break;
    }
  }
  return ops::linear(pooled.reshape({1, head_width(cfg)}), params.head_w, params.head_b);
}

Tensor forward(const synth::SyntheticClip& clip, const ModelConfig& cfg, const ModelParams& params,
               ForwardTrace* trace) {
  return forward_features(extract_features(clip.video, clip.skeleton, cfg, params), cfg, params, trace);
}

}  // namespace drat
