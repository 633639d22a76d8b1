// SPDX-License-Identifier: Apache-2.0
#include "drat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "drat/rng.hpp"
#include "drat/tensor_io.hpp"

namespace drat::synth {

using nlohmann::json;

SkeletonSequence::SkeletonSequence(std::size_t frames, std::size_t joints)
    : frames_(frames), joints_(joints), coords_(frames * joints * 2, 0.0) {
  DRAT_REQUIRE(frames >= 1 && joints >= 1, "skeleton needs T >= 1 and R >= 1");
}

void SkeletonSequence::set(std::size_t t, std::size_t r, double x, double y) {
  DRAT_REQUIRE(t < frames_ && r < joints_, "skeleton index out of range");
  coords_[(t * joints_ + r) * 2] = x;
  coords_[(t * joints_ + r) * 2 + 1] = y;
}

void SkeletonSequence::check_bounds(std::size_t grid_h, std::size_t grid_w) const {
  for (std::size_t t = 0; t < frames_; ++t) {
    for (std::size_t r = 0; r < joints_; ++r) {
      const double px = x(t, r), py = y(t, r);
      DRAT_REQUIRE(px >= 0.0 && px < static_cast<double>(grid_w) && py >= 0.0 && py < static_cast<double>(grid_h),
                   "joint (" + std::to_string(t) + "," + std::to_string(r) + ") outside the F_a grid");
    }
  }
}

SkeletonSequence SkeletonSequence::select_frames(std::span<const std::size_t> frame_index) const {
  SkeletonSequence out(frame_index.size(), joints_);
  for (std::size_t t = 0; t < frame_index.size(); ++t) {
    DRAT_REQUIRE(frame_index[t] < frames_, "frame index out of range");
    for (std::size_t r = 0; r < joints_; ++r) out.set(t, r, x(frame_index[t], r), y(frame_index[t], r));
  }
  return out;
}

SkeletonSequence SkeletonSequence::permute_joints(std::span<const std::size_t> order) const {
  DRAT_REQUIRE(order.size() == joints_, "joint permutation has wrong length");
  SkeletonSequence out(frames_, joints_);
  for (std::size_t t = 0; t < frames_; ++t)
    for (std::size_t r = 0; r < joints_; ++r) out.set(t, r, x(t, order[r]), y(t, order[r]));
  return out;
}

std::string SkeletonSequence::to_json() const {
  json frames = json::array();
  for (std::size_t t = 0; t < frames_; ++t) {
    json joints = json::array();
    for (std::size_t r = 0; r < joints_; ++r) joints.push_back({x(t, r), y(t, r)});
    frames.push_back(std::move(joints));
  }
  json doc = {{"T", frames_}, {"R", joints_}, {"frames", std::move(frames)}};
  return doc.dump();
}

SkeletonSequence SkeletonSequence::from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("skeleton JSON: ") + e.what());
  }
  try {
    const auto t = doc.at("T").get<std::size_t>();
    const auto r = doc.at("R").get<std::size_t>();
    const auto& frames = doc.at("frames");
    DRAT_REQUIRE(frames.size() == t, "skeleton JSON: frame count does not match T");
    SkeletonSequence out(t, r);
    for (std::size_t i = 0; i < t; ++i) {
      DRAT_REQUIRE(frames[i].size() == r, "skeleton JSON: joint count does not match R");
      for (std::size_t j = 0; j < r; ++j) out.set(i, j, frames[i][j].at(0).get<double>(), frames[i][j].at(1).get<double>());
    }
    return out;
  } catch (const json::exception& e) {
    throw IoError(std::string("skeleton JSON: ") + e.what());
  }
}

std::string_view motion_name(Motion m) {
  switch (m) {
    case Motion::TranslateLeft: return "translate-left";
    case Motion::TranslateRight: return "translate-right";
    case Motion::TranslateUp: return "translate-up";
    case Motion::TranslateDown: return "translate-down";
    case Motion::OrbitClockwise: return "orbit-clockwise";
    case Motion::OrbitCounterClockwise: return "orbit-counterclockwise";
    case Motion::Expand: return "expand";
    case Motion::Contract: return "contract";
  }
  return "unknown";
}

namespace {

constexpr double kBackdrop = 0.8;

// Joint trajectories relative to the figure center, before placement.
std::vector<std::array<double, 2>> figure_trajectory(Motion motion, const ClipSpec& spec, Rng& rng) {
  const std::size_t T = spec.frames, R = spec.joints;
  const double grid = static_cast<double>(std::min(spec.height, spec.width)) / 2.0;
  const double radius = rng.uniform(0.15, 0.18) * grid;
  const double heading = rng.uniform(-0.25, 0.25);
  const double travel = rng.uniform(0.30, 0.38) * grid;
  const double sweep = rng.uniform(0.6, 0.9) * std::numbers::pi;
  const double gain = rng.uniform(0.5, 0.8);
  // Small limb swing; its per-frame change stays below the translation step.
  const double swing = 0.02 * grid;
  std::vector<double> swing_phase(R);
  for (auto& p : swing_phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);

  std::vector<std::array<double, 2>> out(T * R);
  for (std::size_t t = 0; t < T; ++t) {
    const double s = T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 0.0;
    double cx = 0.0, cy = 0.0, rho = radius, theta = heading;
    switch (motion) {
      case Motion::TranslateLeft: cx = -travel * s; break;
      case Motion::TranslateRight: cx = travel * s; break;
      case Motion::TranslateUp: cy = -travel * s; break;
      case Motion::TranslateDown: cy = travel * s; break;
      // Image rows grow downward, so increasing angle turns clockwise on screen.
      case Motion::OrbitClockwise: theta += sweep * s; break;
      case Motion::OrbitCounterClockwise: theta -= sweep * s; break;
      case Motion::Expand: rho = radius * (1.0 + gain * s); break;
      case Motion::Contract: rho = radius * (1.0 + gain) * (1.0 - gain / (1.0 + gain) * s); break;
    }
    for (std::size_t r = 0; r < R; ++r) {
      const double angle = theta - std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * static_cast<double>(r) /
                                                                static_cast<double>(R);
      const double wobble = swing * std::sin(3.0 * std::numbers::pi * s + swing_phase[r]);
      out[t * R + r] = {cx + rho * std::cos(angle) + wobble, cy + rho * std::sin(angle) + wobble};
    }
  }
  return out;
}

}  // namespace

SyntheticClip make_clip(Motion motion, const ClipSpec& spec, std::uint64_t seed) {
  DRAT_REQUIRE(spec.frames >= 1 && spec.joints >= 1, "clip needs T >= 1 and R >= 1");
  DRAT_REQUIRE(spec.height >= 8 && spec.width >= 8 && spec.height % 2 == 0 && spec.width % 2 == 0,
               "clip extents must be even and at least 8");
  Rng rng(seed);
  const std::size_t T = spec.frames, R = spec.joints, H = spec.height, W = spec.width;
  const double gw = static_cast<double>(W / 2), gh = static_cast<double>(H / 2);

  auto rel = figure_trajectory(motion, spec, rng);
  double min_x = std::numeric_limits<double>::max(), max_x = -min_x, min_y = min_x, max_y = -min_x;
  for (const auto& p : rel) {
    min_x = std::min(min_x, p[0]);
    max_x = std::max(max_x, p[0]);
    min_y = std::min(min_y, p[1]);
    max_y = std::max(max_y, p[1]);
  }
  const double margin = 0.5;
  const double lo_x = margin - min_x, hi_x = gw - margin - max_x;
  const double lo_y = margin - min_y, hi_y = gh - margin - max_y;
  DRAT_REQUIRE(lo_x <= hi_x && lo_y <= hi_y, "clip grid too small for the figure");
  const double ox = rng.uniform(lo_x, hi_x), oy = rng.uniform(lo_y, hi_y);

  SyntheticClip clip;
  clip.label = static_cast<int>(motion);
  clip.skeleton = SkeletonSequence(T, R);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t r = 0; r < R; ++r) clip.skeleton.set(t, r, rel[t * R + r][0] + ox, rel[t * R + r][1] + oy);

  // Joint r is drawn as a coloured Gaussian blob; F_a pixel i spans video
  // pixels 2i and 2i+1, so its centre sits at video coordinate 2i + 0.5.
  // Static backdrop: red ramps with x, green with y, so that position is
  // visible in local appearance the way a real scene anchors motion.
  std::vector<double> video(3 * T * H * W);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t row = 0; row < H; ++row)
        for (std::size_t col = 0; col < W; ++col) {
          double base = 0.0;
          if (c == 0) base = kBackdrop * static_cast<double>(col) / static_cast<double>(W - 1);
          if (c == 1) base = kBackdrop * static_cast<double>(row) / static_cast<double>(H - 1);
          video[((c * T + t) * H + row) * W + col] = base + rng.uniform(0.0, 0.02);
        }
  const double blob_sigma = 1.1;
  std::vector<std::array<double, 3>> colour(R);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      colour[r][c] = 0.55 + 0.45 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(r) / static_cast<double>(R) +
                                                                     static_cast<double>(c) / 3.0));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t r = 0; r < R; ++r) {
      const double u = 2.0 * clip.skeleton.x(t, r) + 0.5;
      const double v = 2.0 * clip.skeleton.y(t, r) + 0.5;
      for (std::size_t row = 0; row < H; ++row) {
        const double dy = static_cast<double>(row) - v;
        if (std::abs(dy) > 4.0 * blob_sigma) continue;
        for (std::size_t col = 0; col < W; ++col) {
          const double dx = static_cast<double>(col) - u;
          if (std::abs(dx) > 4.0 * blob_sigma) continue;
          const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * blob_sigma * blob_sigma));
          for (std::size_t c = 0; c < 3; ++c) video[((c * T + t) * H + row) * W + col] += colour[r][c] * g;
        }
      }
    }
  }
  clip.video = Tensor::from({3, T, H, W}, std::move(video));
  return clip;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

void generate_dataset(const GenerateOptions& options) {
  DRAT_REQUIRE(options.num_classes >= 2 && options.num_classes <= kMotionCount, "num_classes must be in 2..8");
  DRAT_REQUIRE(options.samples_per_class >= 1, "samples_per_class must be positive");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(options.out_dir / "clips", ec);
  if (!ec) fs::create_directories(options.out_dir / "skeletons", ec);
  if (ec) throw IoError("cannot create dataset directory " + options.out_dir.string() + ": " + ec.message());

  const std::size_t per_class = options.samples_per_class;
  const std::size_t test_per_class = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(per_class)));
  json manifest = json::array();
  for (std::size_t c = 0; c < options.num_classes; ++c) {
    std::vector<std::size_t> order(per_class);
    for (std::size_t j = 0; j < per_class; ++j) order[j] = j;
    Rng split_rng = Rng::derive(options.seed, 0xC1A55000ULL + c);
    split_rng.shuffle(std::span<std::size_t>(order));
    std::vector<bool> is_test(per_class, false);
    for (std::size_t j = 0; j < test_per_class; ++j) is_test[order[j]] = true;

    for (std::size_t j = 0; j < per_class; ++j) {
      const std::size_t index = c * per_class + j;
      const auto clip = make_clip(static_cast<Motion>(c), options.clip, Rng::derive(options.seed, index).next_u64());
      char stem[32];
      std::snprintf(stem, sizeof(stem), "%06zu", index);
      const fs::path video = fs::path("clips") / (std::string(stem) + ".tnsr");
      const fs::path skeleton = fs::path("skeletons") / (std::string(stem) + ".json");
      save_tensor(options.out_dir / video, clip.video, DType::F32);
      write_text(options.out_dir / skeleton, clip.skeleton.to_json());
      manifest.push_back({{"video", video.generic_string()},
                          {"skeleton", skeleton.generic_string()},
                          {"label", clip.label},
                          {"split", is_test[j] ? "test" : "train"}});
    }
  }
  write_text(options.out_dir / "manifest.json", manifest.dump(1));

  json classes = json::array();
  for (std::size_t c = 0; c < options.num_classes; ++c) classes.push_back(motion_name(static_cast<Motion>(c)));
  json info = {{"num_classes", options.num_classes},
               {"samples_per_class", per_class},
               {"T", options.clip.frames},
               {"H", options.clip.height},
               {"W", options.clip.width},
               {"R", options.clip.joints},
               {"seed", options.seed},
               {"classes", classes}};
  write_text(options.out_dir / "dataset.json", info.dump(1));
}

std::vector<DatasetEntry> load_manifest(const std::filesystem::path& dir) {
  json doc;
  try {
    doc = json::parse(read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError("manifest.json: " + std::string(e.what()));
  }
  DRAT_REQUIRE(doc.is_array(), "manifest.json must be a list");
  std::vector<DatasetEntry> entries;
  for (const auto& item : doc) {
    DatasetEntry e;
    try {
      e.video = dir / item.at("video").get<std::string>();
      e.skeleton = dir / item.at("skeleton").get<std::string>();
      e.label = item.at("label").get<int>();
      const auto split = item.at("split").get<std::string>();
      DRAT_REQUIRE(split == "train" || split == "test", "manifest split must be train or test");
      e.train = split == "train";
    } catch (const json::exception& ex) {
      throw IoError("manifest.json entry: " + std::string(ex.what()));
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

DatasetInfo load_dataset_info(const std::filesystem::path& dir) {
  try {
    const json doc = json::parse(read_text(dir / "dataset.json"));
    DatasetInfo info;
    info.num_classes = doc.at("num_classes").get<std::size_t>();
    info.samples_per_class = doc.at("samples_per_class").get<std::size_t>();
    info.clip.frames = doc.at("T").get<std::size_t>();
    info.clip.height = doc.at("H").get<std::size_t>();
    info.clip.width = doc.at("W").get<std::size_t>();
    info.clip.joints = doc.at("R").get<std::size_t>();
    info.seed = doc.at("seed").get<std::uint64_t>();
    return info;
  } catch (const json::exception& e) {
    throw IoError("dataset.json: " + std::string(e.what()));
  }
}

SyntheticClip load_clip(const DatasetEntry& entry) {
  SyntheticClip clip;
  clip.video = load_tensor(entry.video);
  DRAT_REQUIRE(clip.video.rank() == 4 && clip.video.dim(0) == 3, "clip video must be 3 x T x H x W");
  clip.skeleton = SkeletonSequence::from_json(read_text(entry.skeleton));
  DRAT_REQUIRE(clip.skeleton.frames() == clip.video.dim(1), "skeleton and video frame counts differ");
  clip.skeleton.check_bounds(clip.video.dim(2) / 2, clip.video.dim(3) / 2);
  clip.label = entry.label;
  return clip;
}

}  // namespace drat::synth
