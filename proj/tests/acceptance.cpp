// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: drat_acceptance [work_dir]. Training criteria drive the drat
// executable (DRAT_CLI); the rest run in-process.
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>
#include <sys/wait.h>

#include "drat/train.hpp"
#include "drat/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace drat;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Run {
  int status = -1;
  std::string out;
};

Run cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(DRAT_CLI) + " " + args;
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

struct Outcome {
  bool pass = false;
  std::string detail;
  json data = json::object();
};

json report = json::object();
int failures = 0;

void emit(int id, const std::string& title, const std::function<Outcome()>& check) {
  // DRAT_ACCEPT_ONLY=5,8 runs a subset; skipped criteria count as failures.
  if (const char* only = std::getenv("DRAT_ACCEPT_ONLY");
      only && ("," + std::string(only) + ",").find("," + std::to_string(id) + ",") == std::string::npos) {
    std::cout << "criterion " << id << " [" << title << "]: SKIP" << std::endl;
    ++failures;
    return;
  }
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o.detail = std::string("aborted: ") + e.what();
  }
  std::cout << "criterion " << id << " [" << title << "]: " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
            << std::endl;
  if (!o.pass) ++failures;
  report["criteria"].push_back({{"id", id}, {"title", title}, {"pass", o.pass}, {"detail", o.detail}, {"data", o.data}});
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst_primitive = 0.0;
  bool ok = true;
  for (const auto& r : verify::gradcheck_battery(0)) {
    worst_primitive = std::max(worst_primitive, r.max_error);
    ok = ok && r.passed && r.max_error < 1e-5;
  }
  const auto e2e = verify::check_end_to_end_gradient(0);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ok && e2e.passed && e2e.max_error < 1e-4 && secs < 120.0;
  o.detail = "primitive max rel err " + fmt(worst_primitive) + " (<1e-5), end-to-end " + fmt(e2e.max_error) +
             " (<1e-4), " + fmt(secs) + " s (<120)";
  o.data = {{"primitive_max_error", worst_primitive}, {"end_to_end_error", e2e.max_error}, {"seconds", secs}};
  return o;
}

Outcome identity_sampling() {
  const auto r = verify::check_identity_sampling(0, 100);
  return {r.passed && r.max_error <= 1e-12, "max abs err " + fmt(r.max_error) + " over 100 seeds (<=1e-12)",
          {{"max_error", r.max_error}}};
}

Outcome oracle_equivalence() {
  const auto j = verify::check_joint_equivalence(0, 100);
  const auto t = verify::check_temporal_equivalence(0, 100);
  return {j.passed && t.passed && j.max_error <= 1e-9 && t.max_error <= 1e-9,
          "joint " + fmt(j.max_error) + ", temporal " + fmt(t.max_error) + " over 100 seeds (<=1e-9)",
          {{"joint_max_error", j.max_error}, {"temporal_max_error", t.max_error}}};
}

Outcome complexity() {
  // Doubling R (joint axis) and T (temporal axis) with wnd = 4.
  const auto j1 = verify::measure_joint_complexity(2, 64, 4), j2 = verify::measure_joint_complexity(2, 128, 4);
  const auto t1 = verify::measure_temporal_complexity(32, 16, 5, 4),
             t2 = verify::measure_temporal_complexity(64, 16, 5, 4);
  const auto factor = [](std::uint64_t a, std::uint64_t b) { return static_cast<double>(b) / static_cast<double>(a); };
  const double js = factor(j1.stride_dot_products, j2.stride_dot_products);
  const double jo = factor(j1.oracle_dot_products, j2.oracle_dot_products);
  const double ts = factor(t1.stride_dot_products, t2.stride_dot_products);
  const double to = factor(t1.oracle_dot_products, t2.oracle_dot_products);
  const auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
  Outcome o;
  o.pass = in(js, 1.8, 2.2) && in(ts, 1.8, 2.2) && in(jo, 3.8, 4.2) && in(to, 3.8, 4.2);
  o.detail = "joint x" + fmt(js) + " / oracle x" + fmt(jo) + ", temporal x" + fmt(ts) + " / oracle x" + fmt(to) +
             " (stride [1.8,2.2], oracle [3.8,4.2])";
  o.data = {{"joint_stride_factor", js}, {"joint_oracle_factor", jo}, {"temporal_stride_factor", ts},
            {"temporal_oracle_factor", to}};
  return o;
}

Outcome toy_training(const fs::path& work, const fs::path& data) {
  const auto first = work / "toy_run", second = work / "toy_rerun";
  fs::remove_all(first);
  fs::remove_all(second);
  const auto t0 = Clock::now();
  const auto a = cli("train --data " + data.string() + " --out " + first.string() + " --quiet");
  const double secs = seconds_since(t0);
  // The rerun uses a different worker count; the log must not depend on it.
  const auto b = cli("train --data " + data.string() + " --out " + second.string() + " --quiet", "DRAT_THREADS=2");
  Outcome o;
  if (a.status != 0 || b.status != 0) {
    o.detail = "training exited with " + std::to_string(a.status) + "/" + std::to_string(b.status);
    return o;
  }
  const auto metrics = json::parse(slurp(first / "metrics.json"));
  const double acc = metrics.at("test_acc");
  const std::size_t steps = metrics.at("steps");
  const bool same = slurp(first / "metrics.jsonl") == slurp(second / "metrics.jsonl");
  o.pass = acc >= 0.9 && steps <= 2000 && secs < 600.0 && same;
  o.detail = "test acc " + fmt(acc) + " (>=0.9) after " + std::to_string(steps) + " steps, " + fmt(secs) +
             " s (<600), rerun log " + (same ? "identical" : "DIFFERS");
  o.data = {{"test_acc", acc}, {"steps", steps}, {"seconds", secs}, {"rerun_identical", same},
            {"epoch_test_acc", metrics.at("epoch_test_acc")}};
  return o;
}

Outcome ablations(const fs::path& data, std::size_t steps) {
  const auto dataset = load_dataset(data);
  const auto info = synth::load_dataset_info(data);
  ModelConfig base;
  base.T = info.clip.frames;
  base.H = info.clip.height;
  base.W = info.clip.width;
  base.R = info.clip.joints;
  base.num_classes = info.num_classes;
  base.total_steps = steps;

  struct Variant {
    std::string name;
    ModelConfig cfg;
  };
  std::vector<Variant> variants{{"full", base}};
  for (const char* block : {"deformable", "joint", "temporal"}) {
    auto cfg = base;
    if (std::string(block) == "deformable") cfg.blocks.deformable = false;
    if (std::string(block) == "joint") cfg.blocks.joint = false;
    if (std::string(block) == "temporal") cfg.blocks.temporal = false;
    variants.push_back({std::string("no_") + block, cfg});
  }
  for (auto mode : {ModalMode::None, ModalMode::Single}) {
    auto cfg = base;
    cfg.modal = mode;
    variants.push_back({"modal_" + std::string(modal_mode_name(mode)), cfg});
  }

  const std::vector<std::uint64_t> seeds{0, 1, 2};
  json table = json::object();
  for (auto& v : variants)
    for (auto seed : seeds) {
      v.cfg.seed = seed;
      auto params = ModelParams::create(v.cfg);
      TrainOptions opt;
      opt.eval_each_epoch = false;
      table[v.name].push_back(train(dataset, v.cfg, params, opt).test_accuracy);
    }

  Outcome o{true, "", {{"steps", steps}, {"seeds", seeds}, {"test_acc", table}}};
  std::string wins;
  for (std::size_t i = 1; i < variants.size(); ++i) {
    int won = 0;
    for (std::size_t s = 0; s < seeds.size(); ++s)
      if (table["full"][s].get<double>() >= table[variants[i].name][s].get<double>()) ++won;
    o.pass = o.pass && won * 2 > static_cast<int>(seeds.size());
    wins += (wins.empty() ? "" : ", ") + variants[i].name + " " + std::to_string(won) + "/3";
  }
  double full_mean = 0.0;
  for (auto& a : table["full"]) full_mean += a.get<double>() / 3.0;
  o.detail = "full >= ablation on: " + wins + " (majority needed); full mean acc " + fmt(full_mean);
  return o;
}

Outcome stride_sweep(const fs::path& work, const fs::path& data, std::size_t steps) {
  const auto r = cli("bench --axis stride --values 1,2,3,4 --wnd 4 --data " + data.string() + " --steps " +
                     std::to_string(steps));
  Outcome o;
  if (r.status != 0) {
    o.detail = "bench exited with " + std::to_string(r.status);
    return o;
  }
  const auto table = json::parse(r.out);
  std::ofstream(work / "stride_sweep.json") << table.dump(1) << '\n';
  bool complete = table.at("rows").size() == 4;
  for (const auto& row : table.at("rows")) complete = complete && row.contains("test_acc");
  o.pass = complete;
  o.detail = std::to_string(table.at("rows").size()) + " rows with accuracy, table at " +
             (work / "stride_sweep.json").string();
  o.data = table;
  return o;
}

Outcome exported_attention(const fs::path& work, const fs::path& data) {
  const auto out = work / "attention.json";
  const auto r = cli("export-attn --ckpt " + (work / "toy_run").string() + " --sample " +
                     (data / "clips" / "000000.tnsr").string() + " --out " + out.string());
  Outcome o;
  if (r.status != 0) {
    o.detail = "export-attn exited with " + std::to_string(r.status);
    return o;
  }
  const auto doc = json::parse(slurp(out));
  double row_err = 0.0, point_excess = 0.0;
  std::size_t rows = 0, points = 0;
  for (const auto& layer : doc.at("layers")) {
    for (const auto& map : layer.at("maps"))
      for (const auto& row : map.at("attention")) {
        double s = 0.0;
        for (double p : row) s += p;
        row_err = std::max(row_err, std::abs(s - 1.0));
        ++rows;
      }
    for (const auto& xyz : layer.at("deformed_points").at("xyz"))
      for (double v : xyz) {
        point_excess = std::max(point_excess, std::abs(v) - 1.0);
        ++points;
      }
  }
  o.pass = rows > 0 && points > 0 && row_err <= 1e-9 && point_excess <= 0.0;
  o.detail = std::to_string(rows) + " rows, max |sum-1| " + fmt(row_err) + " (<=1e-9); " + std::to_string(points) +
             " coords, all in [-1,1]: " + (point_excess <= 0.0 ? "yes" : "no");
  o.data = {{"rows", rows}, {"max_row_sum_error", row_err}, {"coords", points}};
  return o;
}

std::size_t env_or(const char* name, std::size_t fallback) {
  const char* v = std::getenv(name);
  return v ? std::stoul(v) : fallback;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "drat_acceptance";
  fs::create_directories(work);
  const auto data = work / "toy";
  const auto t0 = Clock::now();

  emit(1, "gradient check", gradients);
  emit(2, "identity sampling", identity_sampling);
  emit(3, "oracle equivalence", oracle_equivalence);
  emit(4, "complexity scaling", complexity);

  if (!fs::exists(data / "dataset.json") || !std::getenv("DRAT_ACCEPT_ONLY")) fs::remove_all(data);
  const bool generated = fs::exists(data / "dataset.json") ||
      cli("generate --out " + data.string() + " --classes 4 --samples 50 --seed 42 > /dev/null").status == 0;
  const auto needs_data = [&](auto check) -> std::function<Outcome()> {
    return [&, check] { return generated ? check() : Outcome{false, "dataset generation failed"}; };
  };
  emit(5, "toy training", needs_data([&] { return toy_training(work, data); }));
  emit(6, "ablation ordering",
       needs_data([&] { return ablations(data, env_or("DRAT_ACCEPT_ABLATION_STEPS", 2000)); }));
  emit(7, "stride sweep", needs_data([&] { return stride_sweep(work, data, env_or("DRAT_ACCEPT_SWEEP_STEPS", 300)); }));
  emit(8, "exported attention", needs_data([&] { return exported_attention(work, data); }));

  report["passed"] = failures == 0;
  report["seconds"] = seconds_since(t0);
  std::ofstream(work / "acceptance.json") << report.dump(1) << '\n';
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria not passed") << " ("
            << fmt(seconds_since(t0)) << " s, report " << (work / "acceptance.json").string() << ")" << std::endl;
  return failures == 0 ? 0 : 1;
}
