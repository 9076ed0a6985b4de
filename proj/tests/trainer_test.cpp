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

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

#include "tavp/checkpoint.hpp"
#include "tavp/trainer.hpp"

namespace tavp {
namespace {

std::vector<Dataset> small_suite(std::uint64_t seed = 5) {
  std::vector<Dataset> out;
  const auto domains = default_domains(64);
  for (int i = 0; i < 2; ++i) out.push_back(generate_synthetic_dataset(domains[i], 3, 4, seed + i));
  return out;
}

std::map<std::string, Tensor> snapshot(TavpModel& m) {
  std::map<std::string, Tensor> s;
  for (Parameter* p : m.parameters()) s[p->name] = p->value;
  return s;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

TrainConfig quick(int epochs, int episodes) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.episodes_per_epoch = episodes;
  tc.learning_rate = 1e-3;
  tc.seed = 17;
  return tc;
}

TEST(Trainer, ZeroEpisodesLeavesInitialParameters) {
  TavpModel model(ModelConfig{}, 3);
  const auto before = snapshot(model);
  Trainer t(model, quick(1, 0));
  t.train(small_suite());
  for (Parameter* p : model.parameters()) EXPECT_TRUE(bitwise_equal(p->value, before.at(p->name))) << p->name;
  ASSERT_EQ(t.history().size(), 1u);
  EXPECT_EQ(t.history()[0].steps, 0);
}

TEST(Trainer, SameSeedGivesIdenticalHistoryAndParameters) {
  const auto data = small_suite();
  TavpModel a(ModelConfig{}, 3), b(ModelConfig{}, 3);
  Trainer ta(a, quick(2, 3)), tb(b, quick(2, 3));
  ta.train(data);
  tb.train(data);
  EXPECT_EQ(ta.history(), tb.history());
  const auto sb = snapshot(b);
  for (Parameter* p : a.parameters()) EXPECT_TRUE(bitwise_equal(p->value, sb.at(p->name))) << p->name;
}

TEST(Trainer, StepTotalIsSegPlusDemAndBackboneHasNoGradient) {
  TavpModel model(ModelConfig{}, 3);
  Trainer t(model, quick(1, 6));
  int steps = 0;
  t.set_step_callback([&](const StepMetrics& m) {
    ++steps;
    EXPECT_EQ(m.total, m.seg + m.dem);
    EXPECT_TRUE(std::isfinite(m.total));
    EXPECT_EQ(m.grad_norms.at("backbone"), 0.0);
    EXPECT_EQ(m.grad_norms.at("decoder"), 0.0);
    EXPECT_GT(m.grad_norms.at("cdtap"), 0.0);
    EXPECT_GT(m.grad_norms.at("decoder_heads"), 0.0);
  });
  t.train(small_suite());
  EXPECT_EQ(steps, 6);
}

TEST(Trainer, UpdatesStayInsideTrainableNamespaces) {
  for (const std::set<std::string>& ns :
       {std::set<std::string>{"cdtap"}, std::set<std::string>{"mff"}, std::set<std::string>{"cdtap", "decoder_heads"}}) {
    TavpModel model(ModelConfig{}, 3);
    const auto before = snapshot(model);
    TrainConfig tc = quick(1, 3);
    tc.trainable_namespaces = ns;
    Trainer t(model, tc);
    t.train(small_suite());
    bool some_moved = false;
    for (Parameter* p : model.parameters()) {
      const bool same = bitwise_equal(p->value, before.at(p->name));
      if (!ns.count(p->name_space())) EXPECT_TRUE(same) << p->name;
      else some_moved |= !same;
    }
    EXPECT_TRUE(some_moved);
  }
}

TEST(Trainer, FrozenAllStepHasZeroGradientsAndNoUpdate) {
  TavpModel model(ModelConfig{}, 3);
  TrainConfig tc = quick(1, 1);
  tc.trainable_namespaces = {};
  Trainer t(model, tc);
  EXPECT_THROW(t.train(small_suite()), ConfigError);
  const auto before = snapshot(model);
  const auto data = small_suite();
  const StepMetrics m = t.training_step(sample_episode(data[0], 1, 9));
  for (const auto& [n, v] : m.grad_norms) EXPECT_EQ(v, 0.0) << n;
  for (Parameter* p : model.parameters()) EXPECT_TRUE(bitwise_equal(p->value, before.at(p->name))) << p->name;
}

TEST(Trainer, RejectsBackboneAndUnknownNamespaces) {
  TavpModel model(ModelConfig{}, 3);
  TrainConfig tc = quick(1, 1);
  tc.trainable_namespaces = {"backbone"};
  EXPECT_THROW(Trainer(model, tc), ConfigError);
  tc.trainable_namespaces = {"encoder"};
  EXPECT_THROW(Trainer(model, tc), ConfigError);
  tc = quick(0, 1);
  EXPECT_THROW(Trainer(model, tc), ConfigError);
}

TEST(Trainer, NonFiniteLossAbortsWithEpisodeSeed) {
  TavpModel model(ModelConfig{}, 3);
  for (Parameter* p : model.parameters_in({"decoder_heads"})) {
    for (double& v : p->value.values()) v = std::numeric_limits<double>::quiet_NaN();
  }
  Trainer t(model, quick(1, 2));
  try {
    t.train(small_suite());
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.episode_seed(), mix_seed(17, 0));
  }
}

TEST(Trainer, ResampleBoundIsRespected) {
  TavpModel model(ModelConfig{}, 3);
  TrainConfig tc = quick(1, 1);
  tc.tau_min = 0.98;
  tc.tau_max = 0.99;
  tc.max_resample = 4;
  Trainer t(model, tc);
  const SampledEpisode se = t.sample(small_suite(), 1);
  EXPECT_TRUE(se.forced);
  EXPECT_EQ(se.rejects, 4);
}

TEST(Trainer, ShotRangeCoversEverySize) {
  TavpModel model(ModelConfig{}, 3);
  TrainConfig tc = quick(1, 1);
  tc.max_shot = 3;
  Trainer t(model, tc);
  std::set<std::size_t> seen;
  const auto data = small_suite();
  for (std::uint64_t s = 0; s < 40; ++s) seen.insert(t.sample(data, s).episode.support.size());
  EXPECT_EQ(seen, (std::set<std::size_t>{1, 2, 3}));
  tc.max_shot = 0;
  EXPECT_EQ(Trainer(model, tc).sample(data, 7).episode.support.size(), 1u);
  tc.shot = 2;
  tc.max_shot = 1;
  EXPECT_THROW(Trainer(model, tc), ConfigError);
}

TEST(Trainer, AdaptationRegimeUsesOneImage) {
  TavpModel model(ModelConfig{}, 3);
  TrainConfig tc = quick(1, 1);
  tc.target_shots_for_adaptation = 1;
  Trainer t(model, tc);
  const SampledEpisode se = t.sample(small_suite(), 4);
  ASSERT_EQ(se.episode.support.size(), 1u);
  EXPECT_EQ(se.episode.support[0].class_id, se.episode.query.class_id);
  EXPECT_EQ(se.episode.query.index, -1);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const auto data = small_suite();
  TavpModel full(ModelConfig{}, 3);
  Trainer tf(full, quick(2, 3));
  tf.train(data);

  const auto path = std::filesystem::temp_directory_path() / "tavp_resume_test.bin";
  {
    TavpModel half(ModelConfig{}, 3);
    Trainer th(half, quick(1, 3));
    th.train(data);
    save_checkpoint(path, half, &th, {{"note", "first half"}});
  }
  TavpModel resumed(ModelConfig{}, 99);
  Trainer tr(resumed, quick(2, 3));
  const CheckpointData ck = read_checkpoint(path);
  restore_checkpoint(ck, resumed, &tr);
  EXPECT_EQ(ck.header["config"]["note"], "first half");
  EXPECT_EQ(tr.history().size(), 1u);
  tr.train(data);
  EXPECT_EQ(tr.history(), tf.history());
  const auto sf = snapshot(full);
  for (Parameter* p : resumed.parameters()) EXPECT_TRUE(bitwise_equal(p->value, sf.at(p->name))) << p->name;
  std::filesystem::remove(path);
}

TEST(Checkpoint, RoundTripIsBitwiseAndErrorsAreExplicit) {
  TavpModel a(ModelConfig{}, 3);
  Trainer t(a, quick(1, 2));
  t.train(small_suite());
  const auto path = std::filesystem::temp_directory_path() / "tavp_roundtrip_test.bin";
  save_checkpoint(path, a, &t, nlohmann::json::object());
  TavpModel b(ModelConfig{}, 8);
  restore_checkpoint(read_checkpoint(path), b);
  const auto sa = snapshot(a);
  for (Parameter* p : b.parameters()) EXPECT_TRUE(bitwise_equal(p->value, sa.at(p->name))) << p->name;

  EXPECT_THROW(read_checkpoint(path.string() + ".missing"), IoError);
  const auto bogus = std::filesystem::temp_directory_path() / "tavp_bogus.bin";
  { std::ofstream(bogus) << "not a checkpoint"; }
  EXPECT_THROW(read_checkpoint(bogus), IoError);
  ModelConfig other;
  other.token_dim = 32;
  TavpModel c(other, 3);
  EXPECT_THROW(restore_checkpoint(read_checkpoint(path), c), IoError);
  std::filesystem::remove(path);
  std::filesystem::remove(bogus);
}

}  // namespace
}  // namespace tavp
