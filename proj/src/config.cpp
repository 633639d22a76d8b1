// SPDX-License-Identifier: Apache-2.0
#include "drat/config.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace drat {

using nlohmann::json;

std::string_view modal_mode_name(ModalMode m) {
  switch (m) {
    case ModalMode::None: return "none";
    case ModalMode::Single: return "single";
    case ModalMode::Cross: return "cross";
  }
  return "cross";
}

ModalMode parse_modal_mode(std::string_view name) {
  if (name == "none") return ModalMode::None;
  if (name == "single") return ModalMode::Single;
  if (name == "cross") return ModalMode::Cross;
  throw ContractViolation("unknown modal-token mode '" + std::string(name) + "' (none|single|cross)");
}

std::size_t ModelConfig::joint_window() const { return wnd_joint ? wnd_joint : std::min<std::size_t>(R, 4); }
std::size_t ModelConfig::temporal_window() const { return wnd_temp ? wnd_temp : std::min<std::size_t>(T, 4); }
std::size_t ModelConfig::joint_stride() const {
  return stride_joint ? stride_joint : std::max<std::size_t>(1, joint_window() / 2);
}
std::size_t ModelConfig::temporal_stride() const {
  return stride_temp ? stride_temp : std::max<std::size_t>(1, temporal_window() / 2);
}
std::size_t ModelConfig::warmup() const {
  if (warmup_steps) return warmup_steps;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.05 * static_cast<double>(total_steps))));
}

void ModelConfig::validate() const {
  DRAT_REQUIRE(C >= 1 && T >= 1 && R >= 1 && H >= 8 && W >= 8, "extents must be positive (H, W >= 8)");
  DRAT_REQUIRE(H % 8 == 0 && W % 8 == 0, "H and W must be divisible by 8");
  DRAT_REQUIRE(num_classes >= 2, "num_classes must be at least 2");
  attention().validate(dim());
  const auto g = rgb_grid();
  DRAT_REQUIRE(g.t >= kernel && g.h >= kernel && g.w >= kernel,
               "offset kernel " + std::to_string(kernel) + " exceeds the RGB token grid");
  DRAT_REQUIRE(joint_window() >= 1 && joint_window() <= R, "wnd_joint must lie in [1, R]");
  DRAT_REQUIRE(temporal_window() >= 1 && temporal_window() <= T, "wnd_temp must lie in [1, T]");
  DRAT_REQUIRE(joint_stride() <= joint_window() && temporal_stride() <= temporal_window(),
               "window stride must not exceed the window");
  DRAT_REQUIRE(sigma > 0.0, "sigma must be positive");
  DRAT_REQUIRE(lr >= 0.0 && weight_decay >= 0.0, "lr and weight_decay must be non-negative");
  DRAT_REQUIRE(batch_size >= 1, "batch_size must be positive");
}

namespace {

template <typename T>
void read(const json& doc, const char* key, T& field, std::set<std::string>* present) {
  if (!doc.contains(key)) return;
  field = doc.at(key).get<T>();
  if (present) present->insert(key);
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "C", "T", "H", "W", "R", "L", "heads", "kernel", "offset_stride", "offset_range", "wnd_joint", "wnd_temp",
      "stride_joint", "stride_temp", "sigma", "num_classes", "modal_tokens", "ablate", "trainable_backbone", "lr",
      "weight_decay", "warmup_steps", "total_steps", "batch_size", "seed"};
  return keys;
}

}  // namespace

ModelConfig parse_config(std::string_view json_text, std::set<std::string>* present) {
  return parse_config(json_text, ModelConfig{}, present);
}

ModelConfig parse_config(std::string_view json_text, const ModelConfig& defaults, std::set<std::string>* present) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("config is not valid JSON: ") + e.what());
  }
  DRAT_REQUIRE(doc.is_object(), "config must be a JSON object");
  for (const auto& [key, value] : doc.items())
    DRAT_REQUIRE(known_keys().count(key), "unknown config key '" + key + "'");
  ModelConfig cfg = defaults;
  try {
    read(doc, "C", cfg.C, present);
    read(doc, "T", cfg.T, present);
    read(doc, "H", cfg.H, present);
    read(doc, "W", cfg.W, present);
    read(doc, "R", cfg.R, present);
    read(doc, "L", cfg.L, present);
    read(doc, "heads", cfg.heads, present);
    read(doc, "kernel", cfg.kernel, present);
    read(doc, "offset_stride", cfg.offset_stride, present);
    read(doc, "offset_range", cfg.offset_range, present);
    read(doc, "wnd_joint", cfg.wnd_joint, present);
    read(doc, "wnd_temp", cfg.wnd_temp, present);
    read(doc, "stride_joint", cfg.stride_joint, present);
    read(doc, "stride_temp", cfg.stride_temp, present);
    read(doc, "sigma", cfg.sigma, present);
    read(doc, "num_classes", cfg.num_classes, present);
    read(doc, "trainable_backbone", cfg.trainable_backbone, present);
    read(doc, "lr", cfg.lr, present);
    read(doc, "weight_decay", cfg.weight_decay, present);
    read(doc, "warmup_steps", cfg.warmup_steps, present);
    read(doc, "total_steps", cfg.total_steps, present);
    read(doc, "batch_size", cfg.batch_size, present);
    read(doc, "seed", cfg.seed, present);
    if (doc.contains("modal_tokens")) {
      cfg.modal = parse_modal_mode(doc.at("modal_tokens").get<std::string>());
      if (present) present->insert("modal_tokens");
    }
    if (doc.contains("ablate")) {
      cfg.blocks = {};
      for (const auto& item : doc.at("ablate")) {
        const auto name = item.get<std::string>();
        if (name == "deformable") cfg.blocks.deformable = false;
        else if (name == "joint") cfg.blocks.joint = false;
        else if (name == "temporal") cfg.blocks.temporal = false;
        else throw ContractViolation("unknown ablation '" + name + "' (deformable|joint|temporal)");
      }
      if (present) present->insert("ablate");
    }
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("config has a field of the wrong type: ") + e.what());
  }
  return cfg;
}

std::string config_to_json(const ModelConfig& cfg, int indent) {
  json ablate = json::array();
  if (!cfg.blocks.deformable) ablate.push_back("deformable");
  if (!cfg.blocks.joint) ablate.push_back("joint");
  if (!cfg.blocks.temporal) ablate.push_back("temporal");
  json doc = {{"C", cfg.C},
              {"T", cfg.T},
              {"H", cfg.H},
              {"W", cfg.W},
              {"R", cfg.R},
              {"L", cfg.L},
              {"heads", cfg.heads},
              {"kernel", cfg.kernel},
              {"offset_stride", cfg.offset_stride},
              {"offset_range", cfg.offset_range},
              {"wnd_joint", cfg.joint_window()},
              {"wnd_temp", cfg.temporal_window()},
              {"stride_joint", cfg.joint_stride()},
              {"stride_temp", cfg.temporal_stride()},
              {"sigma", cfg.sigma},
              {"num_classes", cfg.num_classes},
              {"modal_tokens", modal_mode_name(cfg.modal)},
              {"ablate", ablate},
              {"trainable_backbone", cfg.trainable_backbone},
              {"lr", cfg.lr},
              {"weight_decay", cfg.weight_decay},
              {"warmup_steps", cfg.warmup()},
              {"total_steps", cfg.total_steps},
              {"batch_size", cfg.batch_size},
              {"seed", cfg.seed}};
  return doc.dump(indent);
}

}  // namespace drat
