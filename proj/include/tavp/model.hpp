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
#ifndef TAVP_MODEL_HPP_
#define TAVP_MODEL_HPP_

// Full episode model: frozen encoder and decoder trunk, fusion, task-adaptive
// prompting and the high-level token head.

#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tavp/backbone.hpp"
#include "tavp/cdtap.hpp"
#include "tavp/decoder.hpp"
#include "tavp/mff.hpp"

namespace tavp {

struct ModelConfig {
  EncoderConfig encoder;
  int mask_channels = 8;  // C_m
  int token_dim = 64;     // D
  int mask_upsample = 4;
  bool use_cdtap = true;
  bool use_mff = true;
  PromptCombine prompt_combine = PromptCombine::kAdd;
  double anchor_rcond = 1e-2;
  bool standardize_prompt_inputs = true;

  int mask_resolution() const { return encoder.grid() * mask_upsample; }

  void validate() const {
    encoder.validate();
    if (mask_channels < 1 || token_dim < 1 || mask_upsample < 1) throw ConfigError("invalid model widths");
  }
};

inline const std::set<std::string>& known_namespaces() {
  static const std::set<std::string> names{"backbone", "decoder", "cdtap", "mff", "decoder_heads"};
  return names;
}

struct ModelOutput {
  Var logits;       // H_m x W_m
  Var dense_logit;  // H_m x W_m mask-logit channel of Z, invalid without CDTAP
  bool fg_fallback = false;
  bool bg_fallback = false;
  bool rank_deficient = false;
};

// Cached encoder outputs for one image.
struct EncodedImage {
  FeaturePyramid pyramid;
};

class TavpModel {
 public:
  TavpModel() = default;
  TavpModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    backbone_ = Backbone(config_.encoder, mix_seed(seed, 11));
    mask_head_ = MaskFeatureHead(config_.encoder.channels, config_.mask_channels, config_.mask_upsample,
                                 mix_seed(seed, 12));
    MffConfig mc;
    mc.encoder_channels = config_.encoder.channels;
    mc.mask_channels = config_.mask_channels;
    mc.upsample = config_.mask_upsample;
    mc.use_encoder_levels = config_.use_mff;
    mff_ = Mff(mc, mix_seed(seed, 13));
    CdtapConfig cc;
    cc.feature_channels = config_.encoder.channels;
    cc.token_dim = config_.token_dim;
    cc.mask_channels = config_.mask_channels;
    cc.rcond = config_.anchor_rcond;
    cc.standardize_inputs = config_.standardize_prompt_inputs;
    cc.dense.image_channels = config_.encoder.in_channels;
    cdtap_ = Cdtap(cc, mix_seed(seed, 14));
    DecoderConfig dc;
    dc.token_dim = config_.token_dim;
    dc.mask_channels = config_.mask_channels;
    dc.encoder_channels = config_.encoder.channels;
    dc.pool = config_.mask_upsample;
    dc.prompt_combine = config_.prompt_combine;
    decoder_ = MaskDecoder(dc, mix_seed(seed, 15));
    set_trainable(backbone_.parameters(), false);
    set_trainable(mask_head_.parameters(), false);
    set_trainable(decoder_.trunk_parameters(), false);
  }

  const ModelConfig& config() const { return config_; }
  Backbone& backbone() { return backbone_; }
  Mff& mff() { return mff_; }
  Cdtap& cdtap() { return cdtap_; }
  MaskDecoder& decoder() { return decoder_; }

  void set_use_cdtap(bool on) { config_.use_cdtap = on; }
  void set_use_mff(bool on) {
    config_.use_mff = on;
    mff_.set_use_encoder_levels(on);
  }
  void set_prompt_combine(PromptCombine c) {
    config_.prompt_combine = c;
    decoder_.set_prompt_combine(c);
  }

  // Frozen encoder plus frozen mask-feature head.
  FeaturePyramid encode(const Image& image) {
    FeaturePyramid p = backbone_.encode(image);
    mask_head_.populate(p);
    return p;
  }

  ModelOutput forward(Graph& g, const std::vector<const FeaturePyramid*>& support, const std::vector<Mask>& masks,
                      const FeaturePyramid& query, const Image& query_image) {
    ModelOutput out;
    const Var early = g.constant(query.early_feature);
    const Var mask_feature = g.constant(query.mask_feature);
    const int res = query.mask_resolution();
    if (!config_.use_cdtap) {
      const Var fused = mff_.forward(g, early, g.constant(query.global_feature), mask_feature);
      out.logits = decoder_.decode(g, fused, Var(), Var());
      return out;
    }
    std::vector<Tensor> globals;
    for (std::size_t k = 0; k < support.size(); ++k) globals.push_back(support[k]->global_feature);
    const CdtapOutput c =
        cdtap_.forward(g, globals, masks, query.global_feature, g.constant(query.global_feature), query_image, res);
    out.fg_fallback = c.fg_fallback;
    out.bg_fallback = c.bg_fallback;
    out.rank_deficient = c.transform.rank_deficient;
    const Var fused = mff_.forward(g, early, c.transformed_global, mask_feature);
    out.logits = decoder_.decode(g, fused, c.dense, c.prompt_tokens);
    const int cp = c.dense.dim(0);
    out.dense_logit = ops::reshape(ops::slice_rows(ops::reshape(c.dense, {cp, res * res}), 0, 1), {res, res});
    return out;
  }

  // Logits for the query of an episode, computed without a tape.
  Tensor predict(const Episode& ep) {
    std::vector<FeaturePyramid> sp;
    std::vector<Mask> masks;
    for (const Sample& s : ep.support) {
      sp.push_back(encode(s.image));
      masks.push_back(s.mask);
    }
    std::vector<const FeaturePyramid*> ptrs;
    for (const FeaturePyramid& p : sp) ptrs.push_back(&p);
    const FeaturePyramid q = encode(ep.query.image);
    Graph g;
    return forward(g, ptrs, masks, q, ep.query.image).logits.value();
  }

  ParameterList parameters() {
    ParameterList out = backbone_.parameters();
    for (Parameter* p : mask_head_.parameters()) out.push_back(p);
    for (Parameter* p : decoder_.trunk_parameters()) out.push_back(p);
    for (Parameter* p : cdtap_.parameters()) out.push_back(p);
    for (Parameter* p : mff_.parameters()) out.push_back(p);
    for (Parameter* p : decoder_.head_parameters()) out.push_back(p);
    return out;
  }

  ParameterList parameters_in(const std::set<std::string>& namespaces) {
    ParameterList out;
    for (Parameter* p : parameters()) {
      if (namespaces.count(p->name_space())) out.push_back(p);
    }
    return out;
  }

  // Marks exactly the given namespaces trainable. The backbone is rejected.
  void set_trainable_namespaces(const std::set<std::string>& namespaces) {
    for (const std::string& n : namespaces) {
      if (!known_namespaces().count(n)) throw ConfigError("unknown parameter namespace '" + n + "'");
      if (n == "backbone") throw ConfigError("the backbone cannot be trained");
    }
    for (Parameter* p : parameters()) p->trainable = namespaces.count(p->name_space()) > 0;
  }

  std::map<std::string, std::size_t> parameter_counts() {
    std::map<std::string, std::size_t> out;
    for (Parameter* p : parameters()) out[p->name_space()] += p->value.size();
    return out;
  }

 private:
  ModelConfig config_;
  Backbone backbone_;
  MaskFeatureHead mask_head_;
  Mff mff_;
  Cdtap cdtap_;
  MaskDecoder decoder_;
};

// Encoder outputs keyed by (domain, sample index). Samples without an index
// (augmented copies) are never cached.
class FeatureCache {
 public:
  std::shared_ptr<const FeaturePyramid> get(TavpModel& model, const Sample& s) {
    if (s.index < 0) return std::make_shared<const FeaturePyramid>(model.encode(s.image));
    const auto key = std::make_pair(s.domain_id, s.index);
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      ++misses_;
      it = entries_.emplace(key, std::make_shared<const FeaturePyramid>(model.encode(s.image))).first;
    } else {
      ++hits_;
    }
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }
  long hits() const { return hits_; }
  long misses() const { return misses_; }

 private:
  std::map<std::pair<std::string, int>, std::shared_ptr<const FeaturePyramid>> entries_;
  long hits_ = 0;
  long misses_ = 0;
};

}  // namespace tavp

#endif  // TAVP_MODEL_HPP_
