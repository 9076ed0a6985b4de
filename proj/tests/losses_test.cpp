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

#include "tavp/losses.hpp"
#include "test_util.hpp"

namespace tavp {
namespace {

using testing::grad_check;
using testing::random_tensor;

Tensor random_binary(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform01(rng) < 0.5 ? 1.0 : 0.0;
  return t;
}

double eval(const std::function<Var(Graph&, const Var&)>& fn, const Tensor& x) {
  Graph g;
  return fn(g, g.constant(x)).value()[0];
}

TEST(Dice, Examples) {
  const Tensor mask({2, 2}, std::vector<double>{1, 1, 0, 0});
  const auto dice = [&](Graph&, const Var& p) { return losses::dice_loss(p, mask); };
  EXPECT_NEAR(eval(dice, Tensor({2, 2}, 0.5)), 0.5, 1e-6);
  EXPECT_LE(eval(dice, mask), 1e-6);
  Tensor inv = mask;
  for (double& v : inv.values()) v = 1.0 - v;
  EXPECT_NEAR(eval(dice, inv), 1.0, 1e-6);
  // Exact value with eps: 1 - (2 + 1e-6) / (4 + 1e-6).
  EXPECT_DOUBLE_EQ(eval(dice, Tensor({2, 2}, 0.5)), 1.0 - (2.0 + 1e-6) / (4.0 + 1e-6));
  Graph g;
  EXPECT_THROW(losses::dice_loss(g.constant(Tensor({3, 3})), mask), ShapeError);
}

TEST(CrossEntropy, Examples) {
  Rng rng(1);
  const Tensor mask = random_binary({4, 4}, rng);
  Tensor saturated({4, 4});
  for (std::size_t i = 0; i < mask.size(); ++i) saturated[i] = mask[i] > 0 ? 50.0 : -50.0;
  const auto bce = [&](Graph&, const Var& z) { return losses::bce_loss(z, mask); };
  const auto ce = [&](Graph&, const Var& z) { return losses::ce_loss(z, mask); };
  EXPECT_LE(eval(bce, saturated), 1e-6);
  EXPECT_LE(eval(ce, saturated), 1e-6);
  EXPECT_NEAR(eval(bce, Tensor({4, 4})), std::log(2.0), 1e-15);
  EXPECT_NEAR(eval(ce, Tensor({4, 4})), std::log(2.0), 1e-15);

  // Naive formula at double precision on random 3x3 cases.
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor z = random_tensor({3, 3}, rng, -6, 6);
    const Tensor m = random_binary({3, 3}, rng);
    double naive = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-z[i]));
      naive -= m[i] * std::log(s) + (1 - m[i]) * std::log(1 - s);
    }
    naive /= 9.0;
    EXPECT_NEAR(eval([&](Graph&, const Var& v) { return losses::bce_loss(v, m); }, z), naive, 1e-12);
  }
  // Two-class softmax with a zero background logit equals BCE.
  const Tensor z = random_tensor({3, 3}, rng, -4, 4);
  const Tensor m = random_binary({3, 3}, rng);
  Tensor two({2, 3, 3});
  std::copy(z.values().begin(), z.values().end(), two.data() + 9);
  EXPECT_NEAR(eval([&](Graph&, const Var& v) { return losses::ce_loss(v, m); }, two),
              eval([&](Graph&, const Var& v) { return losses::bce_loss(v, m); }, z), 1e-14);
  Graph g;
  EXPECT_THROW(losses::bce_loss(g.constant(Tensor({2, 3})), m), ShapeError);
}

TEST(SegLoss, EndpointsAndAffinity) {
  Rng rng(2);
  const Tensor z = random_tensor({5, 5}, rng, -3, 3);
  const Tensor m = random_binary({5, 5}, rng);
  auto seg = [&](double lambda) {
    return eval([&](Graph&, const Var& v) { return losses::seg_loss(v, m, LossConfig{lambda, 1e-6}); }, z);
  };
  const double ce = eval([&](Graph&, const Var& v) { return losses::ce_loss(v, m); }, z);
  const double dice = eval([&](Graph&, const Var& v) { return losses::dice_loss(ops::sigmoid(v), m); }, z);
  EXPECT_EQ(seg(0.0), ce);
  EXPECT_EQ(seg(1.0), dice);
  EXPECT_NEAR(seg(0.5), 0.5 * (ce + dice), 1e-12);
  double prev = seg(0.0);
  for (int i = 1; i <= 10; ++i) {
    const double l = i / 10.0;
    const double v = seg(l);
    EXPECT_NEAR(v, (1 - l) * ce + l * dice, 1e-12);
    if (dice >= ce) {
      EXPECT_GE(v, prev - 1e-15);
    } else {
      EXPECT_LE(v, prev + 1e-15);
    }
    prev = v;
  }
  EXPECT_THROW(LossConfig({1.5, 1e-6}).validate(), ConfigError);
  EXPECT_THROW(LossConfig({0.5, 0.0}).validate(), ConfigError);
}

TEST(DemLoss, SumOfComponentsAndAlignment) {
  Rng rng(3);
  const Tensor z = random_tensor({4, 4}, rng, -3, 3);
  const Tensor m = random_binary({4, 4}, rng);
  const double dem = eval([&](Graph&, const Var& v) { return losses::dem_loss(v, m); }, z);
  // Independent recomputation of both terms.
  double bce = 0.0, inter = 0.0, sp = 0.0, sm = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-z[i]));
    bce -= m[i] * std::log(s) + (1 - m[i]) * std::log(1 - s);
    inter += s * m[i];
    sp += s;
    sm += m[i];
  }
  bce /= 16.0;
  const double dice = 1.0 - (2 * inter + 1e-6) / (sp + sm + 1e-6);
  EXPECT_NEAR(dem, bce + dice, 1e-12);
  const double bce_t = eval([&](Graph&, const Var& v) { return losses::bce_loss(v, m); }, z);
  const double dice_t = eval([&](Graph&, const Var& v) { return losses::dice_loss(ops::sigmoid(v), m); }, z);
  EXPECT_EQ(dem, bce_t + dice_t);

  Tensor saturated({4, 4});
  for (std::size_t i = 0; i < m.size(); ++i) saturated[i] = m[i] > 0 ? 50.0 : -50.0;
  EXPECT_LE(eval([&](Graph&, const Var& v) { return losses::dem_loss(v, m); }, saturated), 1e-6);

  // Full-resolution masks are nearest-downsampled to the logit grid.
  Mask full(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) full.at(y, x) = (y < 4 && x >= 4) ? 1 : 0;
  const Tensor aligned = losses::align_mask(full, 4, 4);
  EXPECT_EQ(aligned.at(0, 3), 1.0);
  EXPECT_EQ(aligned.at(3, 3), 0.0);
  EXPECT_EQ(aligned.sum(), 4.0);
  Graph g;
  EXPECT_NO_THROW(losses::dem_loss(g.constant(z), full));
  EXPECT_THROW(losses::dem_loss(g.constant(z), Tensor({8, 8})), ShapeError);
}

TEST(TotalLoss, Sum) {
  EXPECT_DOUBLE_EQ(losses::total_loss(0.3, 0.2), 0.5);
  EXPECT_EQ(losses::total_loss(0.0, 0.0), 0.0);
  Graph g;
  const Var a = g.constant(Tensor({1}, 0.3)), b = g.constant(Tensor({1}, 0.2));
  EXPECT_EQ(losses::total_loss(a, b).value()[0], 0.3 + 0.2);
}

TEST(LossGradients, MatchFiniteDifferences) {
  Rng rng(4);
  const LossConfig cfg{0.3, 1e-6};
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 2 + trial % 3, w = 3 + trial % 2;
    const Tensor m = random_binary({h, w}, rng);
    std::vector<Parameter> logits{Parameter("z", random_tensor({h, w}, rng, -4, 4))};
    std::vector<Parameter> probs{Parameter("p", random_tensor({h, w}, rng, 0.05, 0.95))};
    std::vector<Parameter> multi{Parameter("z3", random_tensor({3, h, w}, rng, -4, 4))};
    Tensor labels({h, w});
    for (double& v : labels.values()) v = uniform_int(rng, 0, 2);
    const struct {
      const char* name;
      std::vector<Parameter>* in;
      std::function<Var(Graph&, std::vector<Var>&)> fn;
    } cases[] = {
        {"dice", &probs, [&](Graph&, std::vector<Var>& v) { return losses::dice_loss(v[0], m); }},
        {"bce", &logits, [&](Graph&, std::vector<Var>& v) { return losses::bce_loss(v[0], m); }},
        {"ce", &multi, [&](Graph&, std::vector<Var>& v) { return losses::ce_loss(v[0], labels); }},
        {"seg", &logits, [&](Graph&, std::vector<Var>& v) { return losses::seg_loss(v[0], m, cfg); }},
        {"dem", &logits, [&](Graph&, std::vector<Var>& v) { return losses::dem_loss(v[0], m); }},
        {"total", &logits,
         [&](Graph&, std::vector<Var>& v) {
           return losses::total_loss(losses::seg_loss(v[0], m, cfg), losses::dem_loss(v[0], m));
         }},
    };
    for (const auto& c : cases) {
      const auto r = grad_check(*c.in, c.fn, 1e-5, 1e-8);
      EXPECT_LE(r.max_rel_error, 1e-4) << c.name << " trial " << trial;
    }
  }
}

TEST(LossRanges, FiniteAndBounded) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z = random_tensor({6, 6}, rng, -50, 50);
    const Tensor m = random_binary({6, 6}, rng);
    const double dice = eval([&](Graph&, const Var& v) { return losses::dice_loss(ops::sigmoid(v), m); }, z);
    const double bce = eval([&](Graph&, const Var& v) { return losses::bce_loss(v, m); }, z);
    const double seg = eval([&](Graph&, const Var& v) { return losses::seg_loss(v, m, LossConfig{}); }, z);
    const double dem = eval([&](Graph&, const Var& v) { return losses::dem_loss(v, m); }, z);
    EXPECT_GE(dice, 0.0);
    EXPECT_LE(dice, 1.0);
    EXPECT_GE(bce, 0.0);
    for (double v : {dice, bce, seg, dem}) EXPECT_TRUE(std::isfinite(v));
  }
}

}  // namespace
}  // namespace tavp
