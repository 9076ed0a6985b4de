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
#include <filesystem>
#include <fstream>
#include <set>

#include "tavp/datasets.hpp"

namespace tavp {
namespace {

DomainSpec ellipse_spec() {
  DomainSpec spec;
  spec.domain_id = "ellipses";
  spec.canvas_size = 48;
  spec.shape_family = ShapeFamily::kEllipse;
  spec.fg_scale_range = {0.1, 0.3};
  return spec;
}

TEST(GenerateTest, DeterministicForFixedSeed) {
  const DomainSpec spec = ellipse_spec();
  const Dataset a = generate_synthetic_dataset(spec, 3, 4, 7);
  const Dataset b = generate_synthetic_dataset(spec, 3, 4, 7);
  EXPECT_EQ(a, b);
  const Dataset c = generate_synthetic_dataset(spec, 3, 4, 8);
  EXPECT_NE(a.samples[0].image, c.samples[0].image);
}

TEST(GenerateTest, MasksAreBinaryWithBothRegionsAndInRange) {
  for (const DomainSpec& spec : default_domains(64)) {
    const Dataset ds = generate_synthetic_dataset(spec, 6, 3, 11);
    ASSERT_EQ(ds.samples.size(), 18u);
    for (const Sample& s : ds.samples) {
      EXPECT_TRUE(s.mask.is_binary());
      EXPECT_GT(s.mask.count(), 0u);
      EXPECT_LT(s.mask.count(), s.mask.data.size());
      EXPECT_GE(s.mask.foreground_ratio(), spec.fg_scale_range.lo);
      EXPECT_LE(s.mask.foreground_ratio(), spec.fg_scale_range.hi);
      for (float v : s.image.data) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
      }
    }
  }
}

// Independent membership test: quadratic form x^T R^T D R x <= 1 written out
// from the rotation matrix rather than the generator's code path.
bool in_ellipse_oracle(const ShapeRecord& s, double px, double py) {
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  const double ia = 1.0 / (s.a * s.a), ib = 1.0 / (s.b * s.b);
  const double m00 = c * c * ia + sn * sn * ib;
  const double m11 = sn * sn * ia + c * c * ib;
  const double m01 = c * sn * (ia - ib);
  const double x = px - s.cx, y = py - s.cy;
  return m00 * x * x + 2 * m01 * x * y + m11 * y * y <= 1.0 + 1e-12;
}

TEST(GenerateTest, EllipseMaskMatchesPerPixelOracle) {
  const DomainSpec spec = ellipse_spec();
  const Dataset ds = generate_synthetic_dataset(spec, 4, 3, 7);
  int checked = 0;
  for (const Sample& s : ds.samples) {
    ASSERT_TRUE(s.shape.has_value());
    if (s.shape->family != ShapeFamily::kEllipse) continue;
    std::size_t oracle = 0;
    for (int y = 0; y < spec.canvas_size; ++y)
      for (int x = 0; x < spec.canvas_size; ++x) oracle += in_ellipse_oracle(*s.shape, x + 0.5, y + 0.5);
    EXPECT_EQ(s.mask.count(), oracle);
    ++checked;
  }
  EXPECT_GT(checked, 0);
}

TEST(GenerateTest, GrayscaleChannelsEqual) {
  DomainSpec spec = ellipse_spec();
  spec.palette = Palette::kGrayscale;
  spec.texture = Texture::kStripes;
  const Dataset ds = generate_synthetic_dataset(spec, 2, 3, 3);
  for (const Sample& s : ds.samples)
    for (int y = 0; y < s.image.height; ++y)
      for (int x = 0; x < s.image.width; ++x) {
        EXPECT_EQ(s.image.at(y, x, 0), s.image.at(y, x, 1));
        EXPECT_EQ(s.image.at(y, x, 1), s.image.at(y, x, 2));
      }
}

TEST(GenerateTest, ClassesHaveDistinctSignatures) {
  const DomainSpec spec = default_domains(64)[1];
  std::set<std::pair<int, int>> seen;
  const Dataset ds = generate_synthetic_dataset(spec, 8, 2, 5);
  for (int c = 0; c < 8; ++c) {
    const Sample& s = ds.samples[ds.indices_of(c)[0]];
    seen.insert({static_cast<int>(s.shape->family), c / 4});
  }
  EXPECT_EQ(seen.size(), 8u);
}

TEST(GenerateTest, RejectsCanvasTooSmallForRange) {
  DomainSpec spec = ellipse_spec();
  spec.canvas_size = 16;
  spec.fg_scale_range = {0.01, 0.2};  // 2.56 px minimum
  EXPECT_THROW(generate_synthetic_dataset(spec, 2, 2, 1), ConfigError);
  spec.fg_scale_range = {0.1, 0.9};
  spec.canvas_size = 64;
  EXPECT_THROW(generate_synthetic_dataset(spec, 2, 2, 1), ConfigError);
  spec.fg_scale_range = {0.1, 0.3};
  EXPECT_THROW(generate_synthetic_dataset(spec, 1, 2, 1), ConfigError);
  spec.canvas_size = 8;
  EXPECT_THROW(generate_synthetic_dataset(spec, 2, 2, 1), ConfigError);
}

class EpisodeTest : public ::testing::Test {
 protected:
  void SetUp() override { ds_ = generate_synthetic_dataset(ellipse_spec(), 3, 7, 21); }
  Dataset ds_;
};

TEST_F(EpisodeTest, OneShotCardinality) {
  const Episode ep = sample_episode(ds_, 1, 5);
  ASSERT_EQ(ep.support.size(), 1u);
  EXPECT_EQ(ep.shot, 1);
  EXPECT_EQ(ep.way, 1);
  EXPECT_NE(ep.query.index, ep.support[0].index);
  EXPECT_EQ(ep.query.class_id, ep.support[0].class_id);
}

TEST_F(EpisodeTest, FiveShotDistinct) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Episode ep = sample_episode(ds_, 5, seed);
    std::set<int> ids{ep.query.index};
    for (const Sample& s : ep.support) {
      ids.insert(s.index);
      EXPECT_EQ(s.class_id, ep.class_id);
    }
    EXPECT_EQ(ids.size(), 6u);
  }
}

TEST_F(EpisodeTest, DeterministicBySeed) {
  const Episode a = sample_episode(ds_, 5, 99);
  const Episode b = sample_episode(ds_, 5, 99);
  EXPECT_EQ(a.query, b.query);
  EXPECT_EQ(a.support, b.support);
}

TEST_F(EpisodeTest, InsufficientSamplesIsSamplingError) {
  EXPECT_THROW(sample_episode(ds_, 7, 1), SamplingError);
  EXPECT_THROW(sample_episode_for_class(ds_, 0, 10, 1), SamplingError);
}

TEST(EpisodeConstructionTest, MixedClassesRejected) {
  Sample a, b;
  a.class_id = 1;
  b.class_id = 2;
  EXPECT_THROW(Episode({a}, b), SamplingError);
}

Sample with_ratio(int fg_pixels, int class_id = 0) {
  Sample s;
  s.class_id = class_id;
  s.mask = Mask(10, 10);
  for (int i = 0; i < fg_pixels; ++i) s.mask.data[i] = 1;
  return s;
}

TEST(AcceptEpisodeTest, Examples) {
  EXPECT_FALSE(accept_episode(Episode({with_ratio(20)}, with_ratio(0)), 0.01, 0.99));
  EXPECT_TRUE(accept_episode(Episode({with_ratio(20), with_ratio(20)}, with_ratio(20)), 0.05, 0.95));
  EXPECT_FALSE(accept_episode(Episode({with_ratio(20), with_ratio(96)}, with_ratio(50)), 0.05, 0.95));
  EXPECT_THROW(accept_episode(Episode({with_ratio(20)}, with_ratio(20)), 0.5, 0.5), ConfigError);
}

TEST(AcceptEpisodeTest, WideningNeverRejects) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Sample> sup;
    const int k = uniform_int(rng, 1, 5);
    for (int i = 0; i < k; ++i) sup.push_back(with_ratio(uniform_int(rng, 0, 100)));
    const Episode ep(sup, with_ratio(uniform_int(rng, 0, 100)));
    const double lo = uniform(rng, 0.0, 0.5), hi = uniform(rng, 0.5, 1.0);
    const double lo2 = uniform(rng, 0.0, lo), hi2 = uniform(rng, hi, 1.0);
    if (accept_episode(ep, lo, hi)) {
      EXPECT_TRUE(accept_episode(ep, lo2, hi2));
    }
  }
}

class AugmentTest : public ::testing::Test {
 protected:
  void SetUp() override { sample_ = generate_synthetic_dataset(ellipse_spec(), 2, 2, 4).samples[0]; }
  Sample sample_;
};

TEST_F(AugmentTest, IdentityPolicyIsBitwiseIdentity) {
  EXPECT_EQ(augment(sample_, AugmentPolicy::identity(), 17), sample_);
}

TEST_F(AugmentTest, HorizontalFlipTwiceRestores) {
  AugmentPolicy p;
  p.hflip_prob = 1.0;
  const Sample once = augment(sample_, p, 1);
  EXPECT_NE(once.image, sample_.image);
  const Sample twice = augment(once, p, 1);
  EXPECT_EQ(twice.image, sample_.image);
  EXPECT_EQ(twice.mask, sample_.mask);
}

TEST_F(AugmentTest, FlipMovesImageAndMaskTogether) {
  AugmentPolicy p;
  p.vflip_prob = 1.0;
  const Sample out = augment(sample_, p, 2);
  const int h = sample_.mask.height;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < sample_.mask.width; ++x) {
      EXPECT_EQ(out.mask.at(y, x), sample_.mask.at(h - 1 - y, x));
      EXPECT_EQ(out.image.at(y, x, 1), sample_.image.at(h - 1 - y, x, 1));
    }
}

TEST_F(AugmentTest, BrightnessClampsConstantImage) {
  Sample s = sample_;
  for (float v : {0.3f, 0.95f}) {
    std::fill(s.image.data.begin(), s.image.data.end(), v);
    AugmentPolicy p;
    p.brightness = {0.1, 0.1};
    const Sample out = augment(s, p, 3);
    const float expected = std::min(static_cast<float>(v + 0.1), 1.0f);
    for (float o : out.image.data) EXPECT_FLOAT_EQ(o, expected);
    EXPECT_EQ(out.mask, s.mask);
  }
}

TEST_F(AugmentTest, AffineKeepsMaskBinaryAndDeterministic) {
  const AugmentPolicy p = AugmentPolicy::standard();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Sample a = augment(sample_, p, seed);
    EXPECT_TRUE(a.mask.is_binary());
    EXPECT_GT(a.mask.count(), 0u);
    EXPECT_EQ(a, augment(sample_, p, seed));
    for (float v : a.image.data) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST_F(AugmentTest, AffineOutOfFrameFallsBackToInput) {
  AugmentPolicy p;
  p.scale = {0.01, 0.01};  // collapses the foreground below one pixel
  p.max_affine_retries = 3;
  EXPECT_EQ(augment(sample_, p, 5), sample_);
}

TEST(PreprocessTest, DeepGlobeGridPartitionsInput) {
  LabeledImage in;
  in.image = Image(kDeepGlobeSize, kDeepGlobeSize, 1);
  in.labels.assign(static_cast<std::size_t>(kDeepGlobeSize) * kDeepGlobeSize, 0);
  // Encode each pixel's index into the image so tiles can be traced back.
  for (int y = 0; y < kDeepGlobeSize; ++y)
    for (int x = 0; x < kDeepGlobeSize; ++x) in.image.at(y, x, 0) = static_cast<float>(y * kDeepGlobeSize + x);
  const auto grid = deepglobe_grid(in);
  ASSERT_EQ(grid.size(), 36u);
  std::vector<std::uint8_t> hit(static_cast<std::size_t>(kDeepGlobeSize) * kDeepGlobeSize, 0);
  for (const Tile& t : grid) {
    ASSERT_EQ(t.content.image.height, kDeepGlobeTile);
    ASSERT_EQ(t.content.image.width, kDeepGlobeTile);
    for (float v : t.content.image.data) ++hit[static_cast<std::size_t>(v)];
  }
  EXPECT_TRUE(std::all_of(hit.begin(), hit.end(), [](std::uint8_t h) { return h == 1; }));
}

TEST(PreprocessTest, DeepGlobeFiltering) {
  LabeledImage in;
  in.image = Image(kDeepGlobeSize, kDeepGlobeSize, 3, 0.5f);
  in.labels.assign(static_cast<std::size_t>(kDeepGlobeSize) * kDeepGlobeSize, 3);
  EXPECT_TRUE(tile_deepglobe(in).empty());

  // Brute-force count of surviving tiles for a vertical split at `split`.
  auto expected = [](const LabeledImage& img) {
    int n = 0;
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 6; ++c) {
        std::set<int> cls;
        for (int y = r * 408; y < (r + 1) * 408; ++y)
          for (int x = c * 408; x < (c + 1) * 408; ++x) cls.insert(img.labels[static_cast<std::size_t>(y) * 2448 + x]);
        if (cls.size() >= 2 && !cls.count(6)) ++n;
      }
    return n;
  };
  for (int split : {1224, 1300}) {
    for (int y = 0; y < kDeepGlobeSize; ++y)
      for (int x = 0; x < kDeepGlobeSize; ++x)
        in.labels[static_cast<std::size_t>(y) * kDeepGlobeSize + x] = x < split ? 1 : 4;
    const auto kept = tile_deepglobe(in);
    EXPECT_EQ(static_cast<int>(kept.size()), expected(in)) << "split " << split;
    for (const Tile& t : kept) EXPECT_EQ(t.col, split / 408);
  }
  EXPECT_EQ(tile_deepglobe(in).size(), 6u);
  // An unknown pixel disqualifies its tile.
  in.labels[static_cast<std::size_t>(10) * kDeepGlobeSize + 1300] = kDeepGlobeUnknown;
  EXPECT_EQ(tile_deepglobe(in).size(), 5u);

  const auto samples = tile_samples(tile_deepglobe(in)[0], "deepglobe");
  ASSERT_EQ(samples.size(), 2u);
  EXPECT_EQ(samples[0].mask.count() + samples[1].mask.count(), 408u * 408u);
}

TEST(PreprocessTest, DeepGlobeWrongSize) {
  LabeledImage in;
  in.image = Image(2000, 2448, 3);
  in.labels.assign(2000u * 2448u, 0);
  EXPECT_THROW(tile_deepglobe(in), ShapeError);
}

TEST(PreprocessTest, DeepGlobeColorCodes) {
  EXPECT_EQ(deepglobe_class_from_rgb(0, 255, 255), 0);
  EXPECT_EQ(deepglobe_class_from_rgb(255, 255, 0), 1);
  EXPECT_EQ(deepglobe_class_from_rgb(255, 0, 255), 2);
  EXPECT_EQ(deepglobe_class_from_rgb(0, 255, 0), 3);
  EXPECT_EQ(deepglobe_class_from_rgb(0, 0, 255), 4);
  EXPECT_EQ(deepglobe_class_from_rgb(255, 255, 255), 5);
  EXPECT_EQ(deepglobe_class_from_rgb(0, 0, 0), kDeepGlobeUnknown);
}

Sample blank_sample(int h, int w, int c) {
  Sample s;
  s.image = Image(h, w, c, 0.25f);
  s.mask = Mask(h, w);
  for (int y = h / 4; y < h / 2; ++y)
    for (int x = w / 4; x < w / 2; ++x) s.mask.at(y, x) = 1;
  return s;
}

TEST(PreprocessTest, ResizeBenchmarkShapes) {
  // ISIC: 1022 wide x 767 high.
  const Sample isic = resize_benchmark(blank_sample(767, 1022, 3), kIsicSize);
  EXPECT_EQ(isic.image.height, 512);
  EXPECT_EQ(isic.image.width, 512);
  EXPECT_EQ(isic.mask.height, 512);
  EXPECT_TRUE(isic.mask.is_binary());
  // ChestX: 4020 x 4892, single channel to keep memory modest.
  const Sample chest = resize_benchmark(blank_sample(4020, 4892, 1), kChestXSize);
  EXPECT_EQ(chest.image.height, 1024);
  EXPECT_EQ(chest.image.width, 1024);
  EXPECT_TRUE(chest.mask.is_binary());
  EXPECT_GT(chest.mask.count(), 0u);
}

TEST(PreprocessTest, ResizeToSameSizeKeepsMask) {
  const Sample s = blank_sample(40, 40, 3);
  const Sample r = resize_benchmark(s, 40);
  EXPECT_EQ(r.mask, s.mask);
  EXPECT_EQ(r.image, s.image);
  EXPECT_THROW(resize_benchmark(s, 0), ConfigError);
  EXPECT_THROW(resize_benchmark(s, -3), ConfigError);
}

TEST(DiskTest, SaveLoadRoundTrip) {
  const auto root = std::filesystem::temp_directory_path() / "tavp_datasets_test";
  std::filesystem::remove_all(root);
  const Dataset ds = generate_synthetic_dataset(ellipse_spec(), 2, 3, 9);
  save_datasets({ds}, root);
  std::ifstream manifest(root / kManifestName);
  std::string header;
  std::getline(manifest, header);
  EXPECT_EQ(header, kManifestHeader);
  const auto loaded = load_datasets(root);
  ASSERT_EQ(loaded.size(), 1u);
  ASSERT_EQ(loaded[0].samples.size(), ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    EXPECT_EQ(loaded[0].samples[i].mask, ds.samples[i].mask);
    EXPECT_EQ(loaded[0].samples[i].class_id, ds.samples[i].class_id);
    for (std::size_t k = 0; k < ds.samples[i].image.data.size(); ++k) {
      EXPECT_NEAR(loaded[0].samples[i].image.data[k], ds.samples[i].image.data[k], 0.5 / 255 + 1e-6);
    }
  }
  std::filesystem::remove_all(root);
}

TEST(FoldTest, FoldsPartitionClasses) {
  const std::vector<int> classes{0, 1, 2, 3, 4, 5, 6};
  std::multiset<int> held;
  for (int f = 0; f < 5; ++f) {
    auto [train, test] = fold_classes(classes, 5, f);
    EXPECT_EQ(train.size() + test.size(), classes.size());
    held.insert(test.begin(), test.end());
  }
  EXPECT_EQ(held, std::multiset<int>(classes.begin(), classes.end()));
  EXPECT_THROW(fold_classes(classes, 5, 5), ConfigError);
}

}  // namespace
}  // namespace tavp
