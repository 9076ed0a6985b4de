/* Copyright 2026 The TAVP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tavp/cli.hpp"

namespace tavp {
namespace {

namespace fs = std::filesystem;

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "tavp");
  std::vector<char*> argv;
  for (std::string& a : args) argv.push_back(a.data());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// A small run: 3 classes x 4 samples, 1 epoch of 2 episodes, 3 eval episodes.
fs::path write_tiny_config(const fs::path& dir, const std::string& extra_train = "") {
  const fs::path p = dir / "tiny.json";
  std::ofstream(p) << R"({
    // comments are allowed
    "seed": 4,
    "data": {"classes_per_domain": 3, "samples_per_class": 6},
    "train": {"epochs": 1, "episodes_per_epoch": 2, "learning_rate": 0.001)"
                   << extra_train << R"(},
    "eval": {"shots": [1], "episodes": 3}
  })";
  return p;
}

TEST(RunConfig, DefaultsRoundTrip) {
  const RunConfig c;
  c.validate();
  const nlohmann::json j = to_json(c);
  EXPECT_EQ(to_json(run_config_from_json(j)), j);
  EXPECT_EQ(j["train"]["learning_rate"], 1e-4);
  EXPECT_EQ(j["train"]["epochs"], 80);
  EXPECT_EQ(j["loss"]["lambda"], 0.5);
}

TEST(RunConfig, UnknownKeysAndBadValuesAreRejected) {
  EXPECT_THROW(run_config_from_json({{"sed", 1}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"epoch", 3}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"epochs", "many"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"trainable_namespaces", {"backbone"}}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"learning_rate", 0.0}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"data", {{"domains", nlohmann::json::array()}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"data", {{"held_out", {"mars"}}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"model", {{"prompt_combine", "concat"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"loss", {{"lambda", 1.5}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"data", {{"samples_per_class", 5}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"shot", 3}, {"max_shot", 2}}}}), ConfigError);
}

TEST(RunConfig, DerivedSeedsDependOnlyOnMasterSeed) {
  RunConfig a, b;
  a.seed = b.seed = 12;
  EXPECT_EQ(a.train_seed(), b.train_seed());
  b.seed = 13;
  EXPECT_NE(a.train_seed(), b.train_seed());
  EXPECT_NE(a.data_seed(), a.model_seed());
}

TEST(Cli, FoldRestrictsHeldOutClasses) {
  RunConfig c;
  c.data.classes_per_domain = 5;
  c.data.samples_per_class = 6;
  c.data.folds = 5;
  c.data.fold = 2;
  c.validate();
  const auto test = cli::evaluation_domains(c);
  ASSERT_EQ(test.size(), 1u);
  EXPECT_EQ(test[0].classes(), std::vector<int>{2});
  c.data.fold = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli({"config", "--print-defaults"}), 0);
  EXPECT_NE(run_cli({}), 0);
  EXPECT_NE(run_cli({"frobnicate"}), 0);
  EXPECT_NE(run_cli({"train", "--shot", "3"}), 0);
  EXPECT_NE(run_cli({"config", "--prompt-combine", "concat"}), 0);
  TempDir dir("tavp_cli_exit");
  EXPECT_EQ(run_cli({"eval", "--out", (dir.path() / "nothing").string()}), 1);
  const fs::path bad = dir.path() / "bad.json";
  std::ofstream(bad) << R"({"data": {"domains": []}})";
  EXPECT_EQ(run_cli({"gen", "--config", bad.string(), "--out", (dir.path() / "d").string()}), 1);
}

TEST(Cli, GenIsDeterministicAndLoadable) {
  TempDir dir("tavp_cli_gen");
  const fs::path cfg = write_tiny_config(dir.path());
  ASSERT_EQ(run_cli({"gen", "--config", cfg.string(), "--out", (dir.path() / "a").string()}), 0);
  ASSERT_EQ(run_cli({"gen", "--config", cfg.string(), "--out", (dir.path() / "b").string()}), 0);
  EXPECT_EQ(slurp(dir.path() / "a" / "manifest.csv"), slurp(dir.path() / "b" / "manifest.csv"));
  const auto loaded = load_datasets(dir.path() / "a");
  ASSERT_EQ(loaded.size(), 4u);
  const RunConfig c = load_run_config(cfg);
  for (std::size_t d = 0; d < loaded.size(); ++d) {
    EXPECT_EQ(loaded[d].samples.size(), 18u);
    const Range& r = c.data.domains[d].fg_scale_range;
    for (const Sample& s : loaded[d].samples) {
      const double fg = s.mask.foreground_ratio();
      EXPECT_GE(fg, r.lo);
      EXPECT_LE(fg, r.hi);
    }
  }
}

TEST(Cli, OracleEvalReportsOne) {
  TempDir dir("tavp_cli_oracle");
  const fs::path cfg = write_tiny_config(dir.path());
  ASSERT_EQ(run_cli({"eval", "--oracle", "--config", cfg.string(), "--out", dir.path().string()}), 0);
  const std::string csv = slurp(dir.path() / "report.csv");
  EXPECT_EQ(csv, "domain,shot,miou,episodes\nchestx_like,1,1,3\n");
}

TEST(Cli, TrainEvalResumeAndOutputRoot) {
  TempDir dir("tavp_cli_train");
  const fs::path cfg = write_tiny_config(dir.path());
  const std::string out = (dir.path() / "run").string();
  ASSERT_EQ(run_cli({"train", "--config", cfg.string(), "--out", out}), 0);
  ASSERT_TRUE(fs::exists(fs::path(out) / "checkpoint.bin"));
  ASSERT_EQ(run_cli({"eval", "--config", cfg.string(), "--out", out}), 0);
  const std::string first = slurp(fs::path(out) / "report.csv");
  EXPECT_NE(first.find("chestx_like,1,"), std::string::npos);

  // Resume to two epochs: history continues from the stored epoch.
  std::string text = slurp(cfg);
  text.replace(text.find("\"epochs\": 1"), 11, "\"epochs\": 2");
  std::ofstream(cfg) << text;
  ASSERT_EQ(run_cli({"train", "--config", cfg.string(), "--out", out, "--resume"}), 0);
  const CheckpointData ck = read_checkpoint(fs::path(out) / "checkpoint.bin");
  EXPECT_EQ(ck.header["metrics_history"].size(), 2u);
  EXPECT_EQ(ck.header["state"]["global_step"], 4);

  ::setenv(cli::kOutEnv, (dir.path() / "root").c_str(), 1);
  EXPECT_EQ(run_cli({"eval", "--oracle", "--config", cfg.string()}), 0);
  ::unsetenv(cli::kOutEnv);
  EXPECT_TRUE(fs::exists(dir.path() / "root" / "default" / "report.csv"));
}

TEST(Cli, NoCdtapFlagIsStoredInCheckpoint) {
  TempDir dir("tavp_cli_nocdtap");
  const fs::path cfg = write_tiny_config(dir.path());
  const std::string out = (dir.path() / "run").string();
  ASSERT_EQ(run_cli({"train", "--config", cfg.string(), "--out", out, "--no-cdtap", "--prompt-combine", "mul"}), 0);
  const CheckpointData ck = read_checkpoint(fs::path(out) / "checkpoint.bin");
  EXPECT_EQ(ck.header["config"]["model"]["use_cdtap"], false);
  EXPECT_EQ(ck.header["config"]["model"]["prompt_combine"], "mul");
  ASSERT_EQ(run_cli({"eval", "--config", cfg.string(), "--out", out}), 0);
}

TEST(Cli, PreprocessResizesBenchmarks) {
  TempDir dir("tavp_cli_pre");
  const fs::path in = dir.path() / "in";
  fs::create_directories(in);
  Image img(767, 1022, 3);
  Mask m(767, 1022);
  for (int y = 300; y < 400; ++y)
    for (int x = 400; x < 600; ++x) m.at(y, x) = 1;
  write_png(in / "case.png", img);
  write_mask_png(in / "case_mask.png", m);
  ASSERT_EQ(run_cli({"preprocess", "isic", "--in", in.string(), "--out", (dir.path() / "isic").string()}), 0);
  const auto ds = load_datasets(dir.path() / "isic");
  ASSERT_EQ(ds.size(), 1u);
  ASSERT_EQ(ds[0].samples.size(), 1u);
  EXPECT_EQ(ds[0].samples[0].image.height, 512);
  EXPECT_EQ(ds[0].samples[0].image.width, 512);
  EXPECT_EQ(ds[0].samples[0].mask.height, 512);
  EXPECT_NE(run_cli({"preprocess", "kitti", "--in", in.string(), "--out", (dir.path() / "x").string()}), 0);
  EXPECT_NE(run_cli({"preprocess", "isic", "--in", (dir.path() / "missing").string(), "--out", "x"}), 0);
}

}  // namespace
}  // namespace tavp
