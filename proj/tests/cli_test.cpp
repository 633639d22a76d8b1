// SPDX-License-Identifier: Apache-2.0
// Drives the drat executable end to end; DRAT_CLI is its path.
#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sys/wait.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(DRAT_CLI) + " " + args + " 2>/dev/null";
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

// A small dataset and checkpoint shared by the tests in this file.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "drat_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    std::ofstream(root_ / "cfg.json") << R"({"C": 4, "heads": 2, "batch_size": 4})";
    const auto gen = run("generate --out " + (root_ / "data").string() +
                         " --classes 2 --samples 4 --frames 4 --joints 3 --height 16 --width 16 --seed 1");
    ASSERT_EQ(gen.status, 0);
    const auto tr = run("train --data " + (root_ / "data").string() + " --config " + (root_ / "cfg.json").string() +
                        " --out " + (root_ / "ckpt").string() + " --steps 3 --quiet");
    ASSERT_EQ(tr.status, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string data() { return (root_ / "data").string(); }
  static std::string ckpt() { return (root_ / "ckpt").string(); }
  static fs::path root_;
};

fs::path Cli::root_;

}  // namespace

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("").status, 2);
  EXPECT_EQ(run("frobnicate").status, 2);
  EXPECT_EQ(run("train --data " + data()).status, 2);
  EXPECT_EQ(run("bench --axis diagonal --values 8").status, 2);
  EXPECT_EQ(run("bench --axis joints --values 8,x").status, 2);
  EXPECT_EQ(run("train --data " + data() + " --out /tmp/x --ablate everything").status, 2);
}

TEST_F(Cli, UnknownConfigKeyIsAUsageError) {
  const auto cfg = root_ / "bad.json";
  std::ofstream(cfg) << R"({"C": 4, "colour": "blue"})";
  EXPECT_EQ(run("train --data " + data() + " --config " + cfg.string() + " --out " + (root_ / "bad").string()).status,
            2);
}

TEST_F(Cli, RuntimeErrorsExitWithOne) {
  EXPECT_EQ(run("eval --ckpt " + (root_ / "missing").string() + " --data " + data()).status, 1);
}

TEST_F(Cli, CheckpointAndMetricsAreWritten) {
  const fs::path dir = ckpt();
  for (const char* f : {"config.json", "metrics.json", "metrics.jsonl"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  std::ifstream log(dir / "metrics.jsonl");
  std::string line;
  std::size_t steps = 0, epochs = 0;
  while (std::getline(log, line)) {
    auto j = json::parse(line);
    if (j.contains("step")) {
      ++steps;
      EXPECT_TRUE(j.contains("loss") && j.contains("lr"));
    }
    if (j.contains("epoch")) {
      ++epochs;
      EXPECT_TRUE(j.contains("test_acc"));
    }
  }
  EXPECT_EQ(steps, 3u);
  EXPECT_GE(epochs, 1u);
}

TEST_F(Cli, SeedFixedRerunIsIdentical) {
  const auto out = (root_ / "again").string();
  ASSERT_EQ(run("train --data " + data() + " --config " + (root_ / "cfg.json").string() + " --out " + out +
                " --steps 3 --quiet")
                .status,
            0);
  EXPECT_EQ(slurp(fs::path(out) / "metrics.jsonl"), slurp(fs::path(ckpt()) / "metrics.jsonl"));
  EXPECT_EQ(slurp(fs::path(out) / "params" / "head_w.tnsr"), slurp(fs::path(ckpt()) / "params" / "head_w.tnsr"));
}

TEST_F(Cli, EvalReportsAccuracyForResampledFrames) {
  for (const char* frames : {"", " --frames 2", " --frames 7"}) {
    const auto r = run("eval --ckpt " + ckpt() + " --data " + data() + frames);
    ASSERT_EQ(r.status, 0) << frames;
    auto j = json::parse(r.out);
    EXPECT_GE(j.at("test_acc").get<double>(), 0.0);
    EXPECT_LE(j.at("test_acc").get<double>(), 1.0);
  }
}

TEST_F(Cli, ExportedAttentionRowsAreDistributions) {
  const auto out = root_ / "attn.json";
  ASSERT_EQ(run("export-attn --ckpt " + ckpt() + " --sample " + data() + "/clips/000000.tnsr --out " + out.string())
                .status,
            0);
  auto doc = json::parse(slurp(out));
  ASSERT_EQ(doc.at("layers").size(), 2u);
  for (const auto& layer : doc.at("layers")) {
    for (const auto& m : layer.at("maps"))
      for (const auto& row : m.at("attention")) {
        double s = 0.0;
        for (double v : row) s += v;
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    for (const auto& p : layer.at("deformed_points").at("xyz"))
      for (double v : p) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
      }
    EXPECT_EQ(layer.at("joint_attention").size(), 3u);
  }
}

TEST_F(Cli, BenchJointsEmitsMonotoneRows) {
  const auto r = run("bench --axis joints --values 8,16,32 --wnd 4");
  ASSERT_EQ(r.status, 0);
  auto rows = json::parse(r.out).at("rows");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_GT(rows[0].at("ratio").get<double>(), rows[1].at("ratio").get<double>());
  EXPECT_GT(rows[1].at("ratio").get<double>(), rows[2].at("ratio").get<double>());
}

TEST_F(Cli, BenchStrideSweep) {
  const auto r = run("bench --axis stride --values 1,2,3,4 --wnd 4");
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(json::parse(r.out).at("rows").size(), 4u);
}

TEST_F(Cli, VerifyPassesAndFaultFails) {
  const auto ok = run("verify --trials 5");
  EXPECT_EQ(ok.status, 0);
  EXPECT_TRUE(json::parse(ok.out).at("passed").get<bool>());
  EXPECT_EQ(run("verify --trials 5 --inject-fault").status, 1);
}
