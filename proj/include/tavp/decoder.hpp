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
#ifndef TAVP_DECODER_HPP_
#define TAVP_DECODER_HPP_

// Prompt-conditioned two-layer mask decoder with a learnable high-level token
// and a dynamic point-wise kernel head.

#include <cmath>
#include <string>
#include <vector>

#include "tavp/mff.hpp"

namespace tavp {

enum class PromptCombine { kAdd, kMul };

inline std::string to_string(PromptCombine c) { return c == PromptCombine::kAdd ? "add" : "mul"; }

inline PromptCombine parse_prompt_combine(const std::string& s) {
  if (s == "add") return PromptCombine::kAdd;
  if (s == "mul") return PromptCombine::kMul;
  throw ConfigError("prompt_combine must be 'add' or 'mul', got '" + s + "'");
}

struct DecoderConfig {
  int token_dim = 64;        // D
  int mask_channels = 8;     // C_m
  int encoder_channels = 64; // C_l, input of the mask-feature head
  int output_tokens = 4;
  int layers = 2;
  int heads = 2;
  int cross_dim = 32;        // internal width of the cross attentions
  int mlp_dim = 128;
  int hq_mlp_dim = 64;
  int pool = 4;              // image stream runs at mask resolution / pool
  PromptCombine prompt_combine = PromptCombine::kAdd;

  void validate() const {
    if (token_dim < 1 || mask_channels < 1 || encoder_channels < 1) throw ConfigError("decoder widths must be >= 1");
    if (token_dim % heads != 0 || cross_dim % heads != 0) throw ConfigError("decoder widths must divide by heads");
    if (layers < 1 || output_tokens < 0 || pool < 1 || mlp_dim < 1 || hq_mlp_dim < 1) throw ConfigError("invalid decoder config");
  }
};

struct TokenSet {
  Tensor output_tokens;     // 4 x D
  Tensor high_level_token;  // 1 x D
  Tensor prompt_tokens;     // N_prompt x D (may be empty)

  int width() const { return output_tokens.dim(1); }
  int prompt_count() const { return prompt_tokens.empty() ? 0 : prompt_tokens.dim(0); }
};

struct MaskLogits {
  Tensor logits;  // H_m x W_m
};

inline TokenSet init_tokens(const DecoderConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  TokenSet t;
  t.output_tokens = trunc_normal({config.output_tokens, config.token_dim}, 0.02, rng);
  t.high_level_token = trunc_normal({1, config.token_dim}, 0.02, rng);
  return t;
}

// Fixed 2D sinusoidal encoding: first half of the width encodes the row,
// second half the column.
inline Tensor sinusoidal_position_encoding(int h, int w, int dim) {
  Tensor pe({h * w, dim});
  const int half = dim / 2;
  const int pairs = half / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double* row = pe.data() + static_cast<std::size_t>(y * w + x) * dim;
      for (int i = 0; i < pairs; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / pairs);
        row[2 * i] = std::sin(y * freq);
        row[2 * i + 1] = std::cos(y * freq);
        row[half + 2 * i] = std::sin(x * freq);
        row[half + 2 * i + 1] = std::cos(x * freq);
      }
    }
  return pe;
}

// Frozen decoder trunk producing the mask feature from the global feature.
class MaskFeatureHead {
 public:
  MaskFeatureHead() = default;
  MaskFeatureHead(int in_channels, int out_channels, int upsample, std::uint64_t seed) {
    Rng rng(seed);
    up_ = ConvTranspose2d("decoder.mask_head", in_channels, out_channels, upsample, upsample, rng);
  }

  Var forward(Graph& g, const Var& global) { return ops::gelu(up_(g, global)); }

  Tensor compute(const Tensor& global) {
    Graph g;
    return forward(g, g.constant(global)).value();
  }

  void populate(FeaturePyramid& pyramid) { pyramid.mask_feature = compute(pyramid.global_feature); }

  ParameterList parameters() {
    ParameterList out;
    up_.collect(out);
    return out;
  }

 private:
  ConvTranspose2d up_;
};

struct DecodeOptions {
  // Skips every attention layer: the kernel comes straight from the initial
  // high-level token and the image stream is not refined.
  bool bypass_attention = false;
};

class MaskDecoder {
 public:
  MaskDecoder() = default;
  MaskDecoder(const DecoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const TokenSet init = init_tokens(config_, seed);
    output_tokens_ = Parameter("decoder.output_tokens", init.output_tokens);
    hq_token_ = Parameter("decoder_heads.hq_token", init.high_level_token);
    Rng rng(mix_seed(seed, 1));
    const int d = config_.token_dim, cm = config_.mask_channels;
    proj_in_ = Linear("decoder.proj_in", cm, d, rng);
    for (int i = 0; i < config_.layers; ++i) {
      const std::string p = "decoder.layers." + std::to_string(i);
      Layer l;
      l.self_attn = Attention(p + ".self_attn", d, d, config_.heads, rng);
      l.norm1 = LayerNorm(p + ".norm1", d);
      l.t2i = Attention(p + ".t2i", d, config_.cross_dim, config_.heads, rng);
      l.norm2 = LayerNorm(p + ".norm2", d);
      l.fc1 = Linear(p + ".mlp.fc1", d, config_.mlp_dim, rng);
      l.fc2 = Linear(p + ".mlp.fc2", config_.mlp_dim, d, rng);
      l.norm3 = LayerNorm(p + ".norm3", d);
      l.i2t = Attention(p + ".i2t", d, config_.cross_dim, config_.heads, rng);
      l.norm4 = LayerNorm(p + ".norm4", d);
      layers_.push_back(std::move(l));
    }
    hq_fc1_ = Linear("decoder_heads.hq_mlp.fc1", d, config_.hq_mlp_dim, rng);
    hq_fc2_ = Linear("decoder_heads.hq_mlp.fc2", config_.hq_mlp_dim, d, rng, 0.02);
    kernel1_ = Linear("decoder_heads.kernel_mlp.0", d, d, rng);
    kernel2_ = Linear("decoder_heads.kernel_mlp.1", d, d, rng);
    kernel3_ = Linear("decoder_heads.kernel_mlp.2", d, cm, rng);
    proj_out_ = Linear("decoder_heads.proj_out", d, cm, rng, 0.0);
  }

  const DecoderConfig& config() const { return config_; }
  void set_prompt_combine(PromptCombine c) { config_.prompt_combine = c; }

  TokenSet tokens() const { return TokenSet{output_tokens_.value, hq_token_.value, Tensor()}; }

  // fused: C_m x H x W. dense: C_m x H x W or invalid (no dense prompt).
  // prompt: N x D or invalid; prompt_mask marks usable prompt rows.
  Var decode(Graph& g, const Var& fused, const Var& dense, const Var& prompt, const std::vector<bool>& prompt_mask = {},
             const DecodeOptions& options = {}) {
    return decode_with_tokens(g, fused, dense, g.parameter(output_tokens_), g.parameter(hq_token_), prompt,
                              prompt_mask, options);
  }

  Var decode_with_tokens(Graph& g, const Var& fused, const Var& dense, const Var& output_tokens, const Var& hq_token,
                         const Var& prompt, const std::vector<bool>& prompt_mask = {},
                         const DecodeOptions& options = {}) {
    require_rank(fused.value(), 3, "decoder fused feature");
    const int cm = config_.mask_channels, d = config_.token_dim;
    if (fused.dim(0) != cm) throw ShapeError("decoder: fused feature has " + std::to_string(fused.dim(0)) + " channels");
    const int h = fused.dim(1), w = fused.dim(2);
    Var cond = fused;
    if (dense.valid()) {
      if (dense.shape() != fused.shape()) {
        throw ShapeError("decoder: dense " + shape_str(dense.shape()) + " vs fused " + shape_str(fused.shape()));
      }
      cond = config_.prompt_combine == PromptCombine::kAdd ? ops::add(fused, dense) : ops::mul(fused, dense);
    }
    if (options.bypass_attention) return ops::pixel_dot(kernel(hq_token), cond);

    if (h % config_.pool != 0 || w % config_.pool != 0) throw ShapeError("decoder: fused size not divisible by pool");
    const int gh = h / config_.pool, gw = w / config_.pool;
    const int n_out = output_tokens.dim(0);
    std::vector<Var> token_parts{output_tokens, hq_token};
    std::vector<bool> key_mask(static_cast<std::size_t>(n_out + 1), true);
    if (prompt.valid()) {
      if (prompt.value().rank() != 2 || prompt.dim(1) != d) throw ShapeError("decoder: prompt tokens must be N x D");
      if (!prompt_mask.empty() && static_cast<int>(prompt_mask.size()) != prompt.dim(0)) {
        throw ShapeError("decoder: prompt mask length");
      }
      token_parts.push_back(prompt);
      for (int i = 0; i < prompt.dim(0); ++i) key_mask.push_back(prompt_mask.empty() ? true : prompt_mask[i]);
    }
    Var tokens = ops::concat_rows(token_parts);
    const int n_tok = tokens.dim(0);
    const int hq = n_out;

    Var img = proj_in_(g, ops::map_to_rows(ops::avg_pool2d(cond, config_.pool)));
    const Tensor pe = sinusoidal_position_encoding(gh, gw, d);

    for (Layer& l : layers_) {
      tokens = l.norm1(g, ops::add(tokens, l.self_attn(g, tokens, tokens, tokens, key_mask)));
      const Var img_keys = ops::add_constant(img, pe);
      tokens = l.norm2(g, ops::add(tokens, l.t2i(g, tokens, img_keys, img)));
      Var delta = l.fc2(g, ops::relu(l.fc1(g, tokens)));
      // Shared point-wise MLP on the high-level token row.
      const Var hq_row = ops::slice_rows(tokens, hq, 1);
      const Var hq_delta = hq_fc2_(g, ops::relu(hq_fc1_(g, hq_row)));
      std::vector<Var> rows{ops::slice_rows(delta, 0, hq), ops::add(ops::slice_rows(delta, hq, 1), hq_delta)};
      if (n_tok > hq + 1) rows.push_back(ops::slice_rows(delta, hq + 1, n_tok - hq - 1));
      tokens = l.norm3(g, ops::add(tokens, ops::concat_rows(rows)));
      img = l.norm4(g, ops::add(img, l.i2t(g, ops::add_constant(img, pe), tokens, tokens, key_mask)));
    }
    const Var refined = ops::upsample_nearest(ops::rows_to_map(proj_out_(g, img), gh, gw), config_.pool);
    const Var fused_out = ops::add(cond, refined);
    return ops::pixel_dot(kernel(ops::slice_rows(tokens, hq, 1)), fused_out);
  }

  // Gradient-free convenience wrapper.
  MaskLogits decode(const FusedFeature& fused, const DenseEmbedding* dense, const TokenSet& tokens) {
    Graph g;
    const Var out = decode_with_tokens(
        g, g.constant(fused.feature), dense ? g.constant(dense->Z) : Var(), g.constant(tokens.output_tokens),
        g.constant(tokens.high_level_token),
        tokens.prompt_count() > 0 ? g.constant(tokens.prompt_tokens) : Var());
    return MaskLogits{out.value()};
  }

  Var kernel(const Var& hq_row) {
    Graph& g = hq_row.graph();
    return kernel3_(g, ops::relu(kernel2_(g, ops::relu(kernel1_(g, hq_row)))));
  }

  Parameter& hq_token() { return hq_token_; }
  Linear& kernel_output_layer() { return kernel3_; }

  // Frozen trunk parameters (namespace "decoder").
  ParameterList trunk_parameters() {
    ParameterList out{&output_tokens_};
    proj_in_.collect(out);
    for (Layer& l : layers_) {
      l.self_attn.collect(out);
      l.norm1.collect(out);
      l.t2i.collect(out);
      l.norm2.collect(out);
      l.fc1.collect(out);
      l.fc2.collect(out);
      l.norm3.collect(out);
      l.i2t.collect(out);
      l.norm4.collect(out);
    }
    return out;
  }

  // Trainable head parameters (namespace "decoder_heads").
  ParameterList head_parameters() {
    ParameterList out{&hq_token_};
    hq_fc1_.collect(out);
    hq_fc2_.collect(out);
    kernel1_.collect(out);
    kernel2_.collect(out);
    kernel3_.collect(out);
    proj_out_.collect(out);
    return out;
  }

  ParameterList parameters() {
    ParameterList out = trunk_parameters();
    for (Parameter* p : head_parameters()) out.push_back(p);
    return out;
  }

 private:
  struct Layer {
    Attention self_attn;
    LayerNorm norm1;
    Attention t2i;
    LayerNorm norm2;
    Linear fc1, fc2;
    LayerNorm norm3;
    Attention i2t;
    LayerNorm norm4;
  };

  DecoderConfig config_;
  Parameter output_tokens_;
  Parameter hq_token_;
  Linear proj_in_;
  std::vector<Layer> layers_;
  Linear hq_fc1_, hq_fc2_;
  Linear kernel1_, kernel2_, kernel3_;
  Linear proj_out_;
};

}  // namespace tavp

#endif  // TAVP_DECODER_HPP_
