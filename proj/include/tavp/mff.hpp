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
#ifndef TAVP_MFF_HPP_
#define TAVP_MFF_HPP_

// Multi-level feature fusion: early and final encoder features are upsampled
// to the mask-feature resolution by transposed convolution, each branch (and
// the mask feature) passes through one 3x3 convolution, and the three are
// summed.

#include <string>

#include "tavp/backbone.hpp"

namespace tavp {

struct MffConfig {
  int encoder_channels = 64;  // C_l
  int mask_channels = 8;      // C_m
  int upsample = 4;
  bool use_encoder_levels = true;  // false: mask feature branch only

  void validate() const {
    if (encoder_channels < 1 || mask_channels < 1) throw ConfigError("mff channel counts must be >= 1");
    if (upsample < 1) throw ConfigError("mff upsample factor must be >= 1");
  }
};

struct FusedFeature {
  Tensor feature;  // C_m x H_m x W_m
};

class Mff {
 public:
  Mff() = default;
  Mff(const MffConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const int cl = config_.encoder_channels, cm = config_.mask_channels, k = config_.upsample;
    up_early_ = ConvTranspose2d("mff.up_early", cl, cm, k, k, rng);
    up_global_ = ConvTranspose2d("mff.up_global", cl, cm, k, k, rng);
    conv_early_ = Conv2d("mff.conv_early", cm, cm, 3, 1, 1, rng);
    conv_global_ = Conv2d("mff.conv_global", cm, cm, 3, 1, 1, rng);
    conv_mask_ = Conv2d("mff.conv_mask", cm, cm, 3, 1, 1, rng);
  }

  const MffConfig& config() const { return config_; }
  void set_use_encoder_levels(bool on) { config_.use_encoder_levels = on; }

  Var forward(Graph& g, const Var& early, const Var& global, const Var& mask_feature) {
    require_rank(mask_feature.value(), 3, "mff mask feature");
    if (mask_feature.dim(0) != config_.mask_channels) {
      throw ShapeError("mff: mask feature has " + std::to_string(mask_feature.dim(0)) +
                       " channels, configured " + std::to_string(config_.mask_channels));
    }
    Var fused = conv_mask_(g, mask_feature);
    if (!config_.use_encoder_levels) return fused;
    for (const Var* level : {&early, &global}) {
      require_rank(level->value(), 3, "mff encoder level");
      if (level->dim(0) != config_.encoder_channels) {
        throw ShapeError("mff: encoder feature has " + std::to_string(level->dim(0)) +
                         " channels, configured " + std::to_string(config_.encoder_channels));
      }
      if (level->dim(1) * config_.upsample != mask_feature.dim(1) ||
          level->dim(2) * config_.upsample != mask_feature.dim(2)) {
        throw ShapeError("mff: encoder feature " + shape_str(level->shape()) + " x" +
                         std::to_string(config_.upsample) + " does not reach mask feature " +
                         shape_str(mask_feature.shape()));
      }
    }
    fused = ops::add(fused, conv_early_(g, up_early_(g, early)));
    fused = ops::add(fused, conv_global_(g, up_global_(g, global)));
    return fused;
  }

  FusedFeature fuse(const FeaturePyramid& pyramid) {
    if (pyramid.mask_feature.empty() || pyramid.early_feature.empty() || pyramid.global_feature.empty()) {
      throw ShapeError("mff: pyramid is not fully populated");
    }
    Graph g;
    const Var out = forward(g, g.constant(pyramid.early_feature), g.constant(pyramid.global_feature),
                            g.constant(pyramid.mask_feature));
    return FusedFeature{out.value()};
  }

  ParameterList parameters() {
    ParameterList out;
    up_early_.collect(out);
    up_global_.collect(out);
    conv_early_.collect(out);
    conv_global_.collect(out);
    conv_mask_.collect(out);
    return out;
  }

 private:
  MffConfig config_;
  ConvTranspose2d up_early_, up_global_;
  Conv2d conv_early_, conv_global_, conv_mask_;
};

}  // namespace tavp

#endif  // TAVP_MFF_HPP_
