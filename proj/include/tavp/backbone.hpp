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
#ifndef TAVP_BACKBONE_HPP_
#define TAVP_BACKBONE_HPP_

// Small pre-norm ViT encoder that stands in for the frozen image encoder. It
// exposes an early (local) feature and the final (global) feature map.

#include <map>
#include <string>
#include <vector>

#include "tavp/image.hpp"
#include "tavp/nn.hpp"

namespace tavp {

struct EncoderConfig {
  int image_size = 64;
  int in_channels = 3;
  int patch_size = 4;
  int depth = 8;
  int early_block_index = 2;  // zero-based; early feature is read after this block
  int channels = 64;          // C_l
  int heads = 4;
  int mlp_ratio = 4;

  int grid() const { return image_size / patch_size; }

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
      throw ConfigError("encoder image_size must be a positive multiple of patch_size");
    }
    if (depth < 1 || early_block_index < 0 || early_block_index >= depth) {
      throw ConfigError("encoder needs 0 <= early_block_index < depth");
    }
    if (channels < 1 || heads < 1 || channels % heads != 0) {
      throw ConfigError("encoder channels must be a positive multiple of heads");
    }
    if (in_channels < 1 || mlp_ratio < 1) throw ConfigError("encoder in_channels/mlp_ratio must be >= 1");
  }
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct FeaturePyramid {
  Tensor early_feature;   // C_l x H_l x W_l
  Tensor global_feature;  // C_l x H_l x W_l
  Tensor mask_feature;    // C_m x H_m x W_m, filled by the decoder trunk

  int encoder_resolution() const { return global_feature.empty() ? 0 : global_feature.dim(1); }
  int mask_resolution() const { return mask_feature.empty() ? 0 : mask_feature.dim(1); }
};

struct DenseEmbedding {
  Tensor Z;  // C_p x H_m x W_m
};

struct EncoderOutput {
  Var early;
  Var global;
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const int c = config_.channels;
    const int patch_dim = config_.patch_size * config_.patch_size * config_.in_channels;
    const int tokens = config_.grid() * config_.grid();
    patch_embed_ = Linear("backbone.patch_embed", patch_dim, c, rng);
    pos_embed_ = Parameter("backbone.pos_embed", trunc_normal({tokens, c}, 0.02, rng));
    for (int i = 0; i < config_.depth; ++i) {
      const std::string p = "backbone.blocks." + std::to_string(i);
      Block b;
      b.norm1 = LayerNorm(p + ".norm1", c);
      b.attn = Attention(p + ".attn", c, c, config_.heads, rng);
      b.norm2 = LayerNorm(p + ".norm2", c);
      b.fc1 = Linear(p + ".mlp.fc1", c, c * config_.mlp_ratio, rng, 0.02);
      b.fc2 = Linear(p + ".mlp.fc2", c * config_.mlp_ratio, c, rng, 0.02);
      blocks_.push_back(std::move(b));
    }
  }

  const EncoderConfig& config() const { return config_; }

  // Patch rows (N x p*p*C), row-major over the patch grid.
  Tensor patchify(const Image& image) const {
    if (image.height != config_.image_size || image.width != config_.image_size ||
        image.channels != config_.in_channels) {
      throw ShapeError("encoder expects " + std::to_string(config_.image_size) + "x" +
                       std::to_string(config_.image_size) + "x" + std::to_string(config_.in_channels) +
                       " input, got " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                       "x" + std::to_string(image.channels));
    }
    const int p = config_.patch_size, g = config_.grid(), ch = config_.in_channels;
    Tensor rows({g * g, p * p * ch});
    for (int gy = 0; gy < g; ++gy)
      for (int gx = 0; gx < g; ++gx) {
        double* row = rows.data() + static_cast<std::size_t>(gy * g + gx) * p * p * ch;
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            for (int c = 0; c < ch; ++c) *row++ = image.at(gy * p + y, gx * p + x, c);
      }
    return rows;
  }

  EncoderOutput forward(Graph& g, const Image& image) {
    const int grid = config_.grid();
    Var x = patch_embed_(g, g.constant(patchify(image)));
    x = ops::add(x, g.parameter(pos_embed_));
    EncoderOutput out;
    for (int i = 0; i < config_.depth; ++i) {
      Block& b = blocks_[i];
      const Var h = b.norm1(g, x);
      x = ops::add(x, b.attn(g, h, h, h));
      x = ops::add(x, b.fc2(g, ops::gelu(b.fc1(g, b.norm2(g, x)))));
      if (i == config_.early_block_index) out.early = ops::rows_to_map(x, grid, grid);
    }
    out.global = ops::rows_to_map(x, grid, grid);
    return out;
  }

  // Gradient-free encoding (early and global levels only).
  FeaturePyramid encode(const Image& image) {
    Graph g;
    const EncoderOutput out = forward(g, image);
    FeaturePyramid pyr;
    pyr.early_feature = out.early.value();
    pyr.global_feature = out.global.value();
    return pyr;
  }

  std::vector<FeaturePyramid> encode_batch(const std::vector<Image>& images) {
    std::vector<FeaturePyramid> out;
    out.reserve(images.size());
    for (const Image& img : images) out.push_back(encode(img));
    return out;
  }

  ParameterList parameters() {
    ParameterList out;
    patch_embed_.collect(out);
    out.push_back(&pos_embed_);
    for (Block& b : blocks_) {
      b.norm1.collect(out);
      b.attn.collect(out);
      b.norm2.collect(out);
      b.fc1.collect(out);
      b.fc2.collect(out);
    }
    return out;
  }

  bool frozen() {
    for (Parameter* p : parameters()) {
      if (p->trainable) return false;
    }
    return true;
  }

 private:
  struct Block {
    LayerNorm norm1;
    Attention attn;
    LayerNorm norm2;
    Linear fc1, fc2;
  };

  EncoderConfig config_;
  Linear patch_embed_;
  Parameter pos_embed_;
  std::vector<Block> blocks_;
};

// Bitwise copy of a parameter set, keyed by name.
struct ParameterSnapshot {
  std::map<std::string, Tensor> values;
};

inline ParameterSnapshot snapshot(const ParameterList& params) {
  ParameterSnapshot s;
  for (const Parameter* p : params) s.values[p->name] = p->value;
  return s;
}

struct FrozenHandle {
  ParameterSnapshot before;
};

struct FreezeReport {
  std::size_t parameters_checked = 0;
  std::size_t values_checked = 0;
};

// Marks every backbone parameter non-trainable and records its values.
inline FrozenHandle freeze(Backbone& backbone) {
  const ParameterList params = backbone.parameters();
  set_trainable(params, false);
  return FrozenHandle{snapshot(params)};
}

// Throws FrozenParameterDrift naming the first parameter that differs.
inline FreezeReport assert_frozen(const ParameterList& params, const ParameterSnapshot& before) {
  FreezeReport report;
  for (const Parameter* p : params) {
    auto it = before.values.find(p->name);
    if (it == before.values.end() || !(it->second == p->value)) throw FrozenParameterDrift(p->name);
    ++report.parameters_checked;
    report.values_checked += p->value.size();
  }
  if (report.parameters_checked != before.values.size()) {
    throw FrozenParameterDrift("<parameter set changed>");
  }
  return report;
}

inline FreezeReport assert_frozen(Backbone& backbone, const FrozenHandle& handle) {
  return assert_frozen(backbone.parameters(), handle.before);
}

}  // namespace tavp

#endif  // TAVP_BACKBONE_HPP_
