// SPDX-License-Identifier: Apache-2.0
// Command-line front end: generate, train, eval, verify, bench, export-attn.
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "drat/model.hpp"
#include "drat/train.hpp"
#include "drat/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace drat;

namespace {

// Thrown for malformed invocations; maps to exit status 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text << '\n';
}

std::vector<std::size_t> parse_csv(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item.empty() || v == 0) throw UsageError("--values expects positive integers, got '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--values is empty");
  return out;
}

// Defaults, then dataset extents, then the config file, then flags.
ModelConfig effective_config(const fs::path& data, const std::string& config_path) {
  ModelConfig cfg;
  const auto info = synth::load_dataset_info(data);
  cfg.T = info.clip.frames;
  cfg.H = info.clip.height;
  cfg.W = info.clip.width;
  cfg.R = info.clip.joints;
  cfg.num_classes = info.num_classes;
  if (!config_path.empty()) {
    try {
      cfg = parse_config(read_file(config_path), cfg, nullptr);
    } catch (const ContractViolation& e) {
      throw UsageError(std::string(config_path) + ": " + e.what());
    }
  }
  return cfg;
}

int cmd_generate(const fs::path& out, std::size_t classes, std::size_t samples, std::size_t frames, std::size_t joints,
                 std::size_t height, std::size_t width, std::uint64_t seed) {
  synth::GenerateOptions opt;
  opt.out_dir = out;
  opt.num_classes = classes;
  opt.samples_per_class = samples;
  opt.clip = {frames, height, width, joints};
  opt.seed = seed;
  synth::generate_dataset(opt);
  std::cout << json{{"out", out.string()}, {"clips", classes * samples}, {"seed", seed}}.dump() << '\n';
  return 0;
}

int cmd_train(const fs::path& data, const std::string& config_path, const fs::path& out,
              const std::vector<std::string>& ablate, const std::string& modal, std::optional<std::uint64_t> seed,
              std::optional<std::size_t> steps, bool quiet) {
  ModelConfig cfg = effective_config(data, config_path);
  for (const auto& a : ablate) {
    if (a == "deformable") cfg.blocks.deformable = false;
    else if (a == "joint") cfg.blocks.joint = false;
    else if (a == "temporal") cfg.blocks.temporal = false;
    else throw UsageError("--ablate expects deformable|joint|temporal");
  }
  if (!modal.empty()) cfg.modal = parse_modal_mode(modal);
  if (seed) cfg.seed = *seed;
  if (steps) cfg.total_steps = *steps;
  cfg.validate();
  std::cout << json{{"config", json::parse(config_to_json(cfg, -1))}}.dump() << '\n';
  const auto dataset = load_dataset(data);
  auto params = ModelParams::create(cfg);
  TrainOptions opt;
  opt.checkpoint_dir = out;
  opt.on_metric = [quiet](const std::string& line) {
    if (!quiet || line.find("\"epoch\"") != std::string::npos) std::cout << line << '\n' << std::flush;
  };
  const auto result = train(dataset, cfg, params, opt);
  std::cout << json{{"test_acc", result.test_accuracy}, {"steps", result.steps}, {"checkpoint", out.string()},
                    {"seed", cfg.seed}}.dump()
            << '\n';
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data, std::optional<std::size_t> frames) {
  auto ck = load_checkpoint(ckpt);
  const auto dataset = load_dataset(data);
  std::vector<synth::SyntheticClip> clips;
  const std::size_t tf = frames.value_or(ck.cfg.T);
  for (const auto& clip : dataset.test) {
    // T' frames are drawn uniformly, then mapped back onto the model's T.
    clips.push_back(tf == ck.cfg.T ? clip : resample_frames(resample_frames(clip, tf), ck.cfg.T));
  }
  const double acc = evaluate(clips, ck.cfg, ck.params);
  json out = {{"test_acc", acc}, {"frames", tf}, {"clips", clips.size()}, {"seed", ck.cfg.seed},
              {"config", json::parse(config_to_json(ck.cfg, -1))}};
  if (!ck.metrics_json.empty()) out["logged_test_acc"] = json::parse(ck.metrics_json).value("test_acc", -1.0);
  std::cout << out.dump() << '\n';
  return 0;
}

int cmd_verify(std::uint64_t seed, std::size_t trials, bool fault, const std::string& out) {
  verify::SuiteOptions opt{seed, trials, fault};
  const auto report = verify::run_equivalence_suite(opt);
  const auto text = report.to_json();
  if (!out.empty()) write_file(out, text);
  std::cout << text << '\n';
  return report.passed() ? 0 : 1;
}

int cmd_bench(const std::string& axis, const std::vector<std::size_t>& values, std::size_t wnd, std::size_t frames,
              std::size_t joints, std::size_t hw, const std::string& data, std::size_t steps, std::uint64_t seed) {
  std::vector<verify::ComplexityRow> rows;
  json table = json::array();
  if (axis == "joints") {
    for (auto r : values) {
      if (wnd > r) throw UsageError("--wnd exceeds R = " + std::to_string(r));
      rows.push_back(verify::measure_joint_complexity(frames, r, wnd));
    }
  } else if (axis == "time") {
    for (auto t : values) {
      if (wnd > t) throw UsageError("--wnd exceeds T = " + std::to_string(t));
      rows.push_back(verify::measure_temporal_complexity(t, hw, joints, wnd));
    }
  } else if (axis == "stride") {
    if (wnd > frames) throw UsageError("--wnd exceeds T");
    for (auto s : values) {
      if (s > wnd) throw UsageError("stride values must not exceed --wnd");
      rows.push_back(verify::measure_temporal_complexity(frames, hw, joints, wnd, s));
    }
  } else {
    throw UsageError("--axis expects joints|time|stride");
  }
  const auto complexity = json::parse(verify::complexity_json(rows));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    json row = complexity[i];
    if (axis == "stride" && !data.empty()) {
      ModelConfig cfg = effective_config(data, "");
      cfg.wnd_temp = wnd;
      cfg.stride_temp = values[i];
      cfg.total_steps = steps;
      cfg.seed = seed;
      cfg.validate();
      const auto dataset = load_dataset(data);
      auto params = ModelParams::create(cfg);
      TrainOptions opt;
      opt.eval_each_epoch = false;
      row["test_acc"] = train(dataset, cfg, params, opt).test_accuracy;
      row["steps"] = steps;
    }
    table.push_back(std::move(row));
  }
  std::cout << json{{"axis", axis}, {"wnd", wnd}, {"seed", seed}, {"rows", table}}.dump(1) << '\n';
  return 0;
}

int cmd_export(const fs::path& ckpt, const fs::path& sample, const std::string& skeleton_path, const fs::path& out) {
  auto ck = load_checkpoint(ckpt);
  synth::DatasetEntry entry;
  entry.video = sample;
  entry.skeleton = skeleton_path.empty() ? sample.parent_path().parent_path() / "skeletons" / (sample.stem().string() + ".json")
                                         : fs::path(skeleton_path);
  const auto clip = synth::load_clip(entry);
  ForwardTrace trace;
  Tensor logits;
  {
    NoGradGuard guard;
    logits = forward(clip, ck.cfg, ck.params, &trace);
  }
  json layers = json::array();
  for (std::size_t l = 0; l < ck.cfg.L; ++l) {
    json maps = json::array();
    for (const auto& m : trace.maps) {
      if (m.layer != l) continue;
      // Head-averaged queries x keys matrix.
      std::vector<std::vector<double>> rows(m.queries, std::vector<double>(m.keys, 0.0));
      for (std::size_t h = 0; h < m.heads; ++h)
        for (std::size_t q = 0; q < m.queries; ++q)
          for (std::size_t k = 0; k < m.keys; ++k) rows[q][k] += m.probs[(h * m.queries + q) * m.keys + k] / static_cast<double>(m.heads);
      maps.push_back({{"block", m.block}, {"window", m.window}, {"heads", m.heads}, {"attention", rows}});
    }
    json layer = {{"layer", l}, {"maps", maps}};
    for (const auto& p : trace.points) {
      if (p.layer != l) continue;
      json pts = json::array();
      for (std::size_t i = 0; i + 2 < p.xyz.size(); i += 3) pts.push_back({p.xyz[i], p.xyz[i + 1], p.xyz[i + 2]});
      layer["deformed_points"] = {{"grid", {p.t, p.h, p.w}}, {"xyz", pts}};
    }
    for (const auto& s : trace.joint_series) {
      if (s.layer != l) continue;
      std::vector<std::vector<double>> series(s.joints, std::vector<double>(s.frames));
      for (std::size_t r = 0; r < s.joints; ++r)
        for (std::size_t t = 0; t < s.frames; ++t) series[r][t] = s.values[r * s.frames + t];
      layer["joint_attention"] = series;
    }
    layers.push_back(std::move(layer));
  }
  const auto lv = logits.data();
  const json doc = {{"sample", sample.string()},
                    {"label", clip.label},
                    {"logits", std::vector<double>(lv.begin(), lv.end())},
                    {"predicted", std::max_element(lv.begin(), lv.end()) - lv.begin()},
                    {"seed", ck.cfg.seed},
                    {"config", json::parse(config_to_json(ck.cfg, -1))},
                    {"layers", layers}};
  write_file(out, doc.dump());
  std::cout << json{{"out", out.string()}, {"layers", ck.cfg.L}, {"maps", trace.maps.size()}}.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable action-recognition transformer toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Write a synthetic motion dataset");
  std::string gen_out;
  std::size_t classes = 4, samples = 50, gen_frames = 12, gen_joints = 5, height = 32, width = 32;
  std::uint64_t gen_seed = 42;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--classes", classes, "Number of motion classes (2-8)");
  gen->add_option("--samples", samples, "Samples per class");
  gen->add_option("--frames", gen_frames, "Frames per clip");
  gen->add_option("--joints", gen_joints, "Joints per figure");
  gen->add_option("--height", height, "Video height");
  gen->add_option("--width", width, "Video width");
  gen->add_option("--seed", gen_seed, "Generator seed");

  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_data, tr_config, tr_out, tr_modal;
  std::vector<std::string> tr_ablate;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::size_t> tr_steps;
  bool tr_quiet = false;
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--config", tr_config, "RunConfig JSON file");
  tr->add_option("--out", tr_out, "Checkpoint directory")->required();
  tr->add_option("--ablate", tr_ablate, "Disable a block: deformable|joint|temporal")->take_all();
  tr->add_option("--modal-tokens", tr_modal, "Modal-token mode: none|single|cross");
  tr->add_option("--seed", tr_seed, "Override the config seed");
  tr->add_option("--steps", tr_steps, "Override total_steps");
  tr->add_flag("--quiet", tr_quiet, "Print only per-epoch records");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  std::string ev_ckpt, ev_data;
  std::optional<std::size_t> ev_frames;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint directory")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--frames", ev_frames, "Test-time frame count T'");

  auto* ve = app.add_subcommand("verify", "Run the equivalence and gradient suite");
  std::uint64_t ve_seed = 0;
  std::size_t ve_trials = 100;
  bool ve_fault = false;
  std::string ve_out;
  ve->add_option("--seed", ve_seed, "Suite seed");
  ve->add_option("--trials", ve_trials, "Random cases per equivalence check");
  ve->add_flag("--inject-fault", ve_fault, "Mutation test: drop the attention scaling");
  ve->add_option("--out", ve_out, "Also write the report here");

  auto* be = app.add_subcommand("bench", "Measure attention work against the full-attention oracle");
  std::string be_axis, be_values, be_data;
  std::size_t be_wnd = 4, be_frames = 12, be_joints = 5, be_hw = 16, be_steps = 300;
  std::uint64_t be_seed = 0;
  be->add_option("--axis", be_axis, "joints|time|stride")->required();
  be->add_option("--values", be_values, "Comma-separated R, T or stride values")->required();
  be->add_option("--wnd", be_wnd, "Window size");
  be->add_option("--frames", be_frames, "T for the joints and stride axes");
  be->add_option("--joints", be_joints, "R for the time and stride axes");
  be->add_option("--tokens-per-frame", be_hw, "RGB tokens per frame (h*w)");
  be->add_option("--data", be_data, "Stride axis: also train on this dataset and report accuracy");
  be->add_option("--steps", be_steps, "Training steps per stride when --data is given");
  be->add_option("--seed", be_seed, "Training seed");

  auto* ex = app.add_subcommand("export-attn", "Export attention maps for one clip");
  std::string ex_ckpt, ex_sample, ex_skeleton, ex_out;
  ex->add_option("--ckpt", ex_ckpt, "Checkpoint directory")->required();
  ex->add_option("--sample", ex_sample, "Clip video (TNSR)")->required();
  ex->add_option("--skeleton", ex_skeleton, "Skeleton JSON (default: ../skeletons/<stem>.json)");
  ex->add_option("--out", ex_out, "Output JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_generate(gen_out, classes, samples, gen_frames, gen_joints, height, width, gen_seed);
    if (*tr) return cmd_train(tr_data, tr_config, tr_out, tr_ablate, tr_modal, tr_seed, tr_steps, tr_quiet);
    if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_frames);
    if (*ve) return cmd_verify(ve_seed, ve_trials, ve_fault, ve_out);
    if (*be)
      return cmd_bench(be_axis, parse_csv(be_values), be_wnd, be_frames, be_joints, be_hw, be_data, be_steps, be_seed);
    if (*ex) return cmd_export(ex_ckpt, ex_sample, ex_skeleton, ex_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ContractViolation& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 2;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
