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
#ifndef TAVP_CONFIG_HPP_
#define TAVP_CONFIG_HPP_

// Run configuration: one JSON document, validated on load, unknown keys
// rejected.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tavp/datasets.hpp"
#include "tavp/losses.hpp"
#include "tavp/model.hpp"
#include "tavp/trainer.hpp"

namespace tavp {

struct DataConfig {
  std::vector<DomainSpec> domains = default_domains(64);
  int classes_per_domain = 6;
  int samples_per_class = 10;
  std::vector<std::string> held_out{"chestx_like"};
  // folds > 1: held-out domains are evaluated on the classes of `fold` only.
  int folds = 1;
  int fold = 0;
  std::string data_dir;  // when set, datasets are loaded from disk instead of generated

  void validate() const {
    if (domains.empty()) throw ConfigError("data.domains must not be empty");
    std::set<std::string> ids;
    for (const DomainSpec& d : domains) {
      d.validate();
      if (!ids.insert(d.domain_id).second) throw ConfigError("duplicate domain_id '" + d.domain_id + "'");
    }
    for (const std::string& h : held_out) {
      if (!ids.count(h)) throw ConfigError("held-out domain '" + h + "' is not configured");
    }
    if (held_out.size() >= domains.size()) throw ConfigError("at least one training domain is required");
    if (classes_per_domain < 2) throw ConfigError("classes_per_domain must be >= 2");
    if (samples_per_class < 2) throw ConfigError("samples_per_class must be >= 2");
    if (folds < 1 || fold < 0 || fold >= folds) throw ConfigError("need 0 <= data.fold < data.folds");
    if (folds > classes_per_domain) throw ConfigError("data.folds exceeds classes_per_domain");
  }
};

struct EvalConfig {
  std::vector<int> shots{1, 5};
  int episodes = 60;

  void validate() const {
    if (shots.empty()) throw ConfigError("eval.shots must not be empty");
    for (int s : shots)
      if (s < 1) throw ConfigError("eval shots must be >= 1");
    if (episodes < 1) throw ConfigError("eval.episodes must be >= 1");
  }
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  DataConfig data;
  ModelConfig model;
  LossConfig loss;
  TrainConfig train = default_train();
  EvalConfig eval;

  static TrainConfig default_train() {
    TrainConfig t;
    t.epochs = 80;
    t.episodes_per_epoch = 25;
    t.learning_rate = 1e-4;
    t.max_shot = 5;
    return t;
  }

  void validate() const {
    data.validate();
    model.validate();
    loss.validate();
    TrainConfig t = train;
    t.lambda = loss.lambda;
    t.validate();
    eval.validate();
    int largest = std::max(train.shot, train.max_shot);
    for (int s : eval.shots) largest = std::max(largest, s);
    if (largest + 1 > data.samples_per_class) {
      throw ConfigError(std::to_string(largest) + "-shot episodes need samples_per_class >= " +
                        std::to_string(largest + 1));
    }
    for (const DomainSpec& d : data.domains) {
      if (d.canvas_size != model.encoder.image_size) {
        throw ConfigError("domain '" + d.domain_id + "' canvas " + std::to_string(d.canvas_size) +
                          " differs from encoder image_size " + std::to_string(model.encoder.image_size));
      }
    }
  }

  // Seeds for the independent random streams, all derived from `seed`.
  std::uint64_t data_seed() const { return mix_seed(seed, 0xda7a); }
  std::uint64_t model_seed() const { return mix_seed(seed, 0x30de1); }
  std::uint64_t train_seed() const { return mix_seed(seed, 0x7a1e); }
  std::uint64_t eval_seed() const { return mix_seed(seed, 0xe5a1); }

  TrainConfig resolved_train() const {
    TrainConfig t = train;
    t.lambda = loss.lambda;
    t.seed = train_seed();
    return t;
  }
};

namespace config_detail {

using nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<const char*> keys, const std::string& path) {
  if (!j.is_object()) throw ConfigError("'" + path + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError("unknown key '" + (path.empty() ? "" : path + ".") + it.key() + "'");
  }
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

inline void get_range(const json& j, const char* key, Range& r, const std::string& path) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw ConfigError("'" + path + "." + key + "' must be [min, max]");
  r = {v[0].get<double>(), v[1].get<double>()};
}

inline json to_json(const DomainSpec& d) {
  return {{"domain_id", d.domain_id},
          {"canvas_size", d.canvas_size},
          {"shape_family", to_string(d.shape_family)},
          {"texture", to_string(d.texture)},
          {"palette", to_string(d.palette)},
          {"fg_scale_range", range_json(d.fg_scale_range)},
          {"noise_std", d.noise_std},
          {"distractors", d.distractors}};
}

inline DomainSpec domain_from_json(const json& j, const std::string& path) {
  check_keys(j, {"domain_id", "canvas_size", "shape_family", "texture", "palette", "fg_scale_range", "noise_std",
                 "distractors"},
             path);
  DomainSpec d;
  get(j, "domain_id", d.domain_id);
  get(j, "canvas_size", d.canvas_size);
  if (j.contains("shape_family")) d.shape_family = parse_shape_family(j["shape_family"].get<std::string>());
  if (j.contains("texture")) d.texture = parse_texture(j["texture"].get<std::string>());
  if (j.contains("palette")) d.palette = parse_palette(j["palette"].get<std::string>());
  get_range(j, "fg_scale_range", d.fg_scale_range, path);
  get(j, "noise_std", d.noise_std);
  get(j, "distractors", d.distractors);
  return d;
}

inline json to_json(const AugmentPolicy& a) {
  return {{"brightness", range_json(a.brightness)}, {"contrast", range_json(a.contrast)},
          {"saturation", range_json(a.saturation)}, {"hflip_prob", a.hflip_prob},
          {"vflip_prob", a.vflip_prob},             {"rotation_deg", a.rotation_deg},
          {"translate_frac", a.translate_frac},     {"scale", range_json(a.scale)},
          {"max_affine_retries", a.max_affine_retries}};
}

inline AugmentPolicy augment_from_json(const json& j, const std::string& path) {
  check_keys(j, {"brightness", "contrast", "saturation", "hflip_prob", "vflip_prob", "rotation_deg", "translate_frac",
                 "scale", "max_affine_retries"},
             path);
  AugmentPolicy a;
  get_range(j, "brightness", a.brightness, path);
  get_range(j, "contrast", a.contrast, path);
  get_range(j, "saturation", a.saturation, path);
  get(j, "hflip_prob", a.hflip_prob);
  get(j, "vflip_prob", a.vflip_prob);
  get(j, "rotation_deg", a.rotation_deg);
  get(j, "translate_frac", a.translate_frac);
  get_range(j, "scale", a.scale, path);
  get(j, "max_affine_retries", a.max_affine_retries);
  return a;
}

}  // namespace config_detail

inline nlohmann::json to_json(const RunConfig& c) {
  using config_detail::to_json;
  nlohmann::json domains = nlohmann::json::array();
  for (const DomainSpec& d : c.data.domains) domains.push_back(to_json(d));
  const EncoderConfig& e = c.model.encoder;
  const TrainConfig& t = c.train;
  return {
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"data",
       {{"domains", domains},
        {"classes_per_domain", c.data.classes_per_domain},
        {"samples_per_class", c.data.samples_per_class},
        {"held_out", c.data.held_out},
        {"folds", c.data.folds},
        {"fold", c.data.fold},
        {"data_dir", c.data.data_dir}}},
      {"model",
       {{"encoder",
         {{"image_size", e.image_size},
          {"in_channels", e.in_channels},
          {"patch_size", e.patch_size},
          {"depth", e.depth},
          {"early_block_index", e.early_block_index},
          {"channels", e.channels},
          {"heads", e.heads},
          {"mlp_ratio", e.mlp_ratio}}},
        {"mask_channels", c.model.mask_channels},
        {"token_dim", c.model.token_dim},
        {"mask_upsample", c.model.mask_upsample},
        {"use_cdtap", c.model.use_cdtap},
        {"use_mff", c.model.use_mff},
        {"prompt_combine", to_string(c.model.prompt_combine)},
        {"anchor_rcond", c.model.anchor_rcond},
        {"standardize_prompt_inputs", c.model.standardize_prompt_inputs}}},
      {"loss", {{"lambda", c.loss.lambda}, {"eps_dice", c.loss.eps_dice}}},
      {"train",
       {{"epochs", t.epochs},
        {"episodes_per_epoch", t.episodes_per_epoch},
        {"shot", t.shot},
        {"max_shot", t.max_shot},
        {"learning_rate", t.learning_rate},
        {"trainable_namespaces", t.trainable_namespaces},
        {"tau_min", t.tau_min},
        {"tau_max", t.tau_max},
        {"augment", t.augment},
        {"augmentation", to_json(t.augmentation)},
        {"max_resample", t.max_resample},
        {"target_shots_for_adaptation", t.target_shots_for_adaptation}}},
      {"eval", {{"shots", c.eval.shots}, {"episodes", c.eval.episodes}}},
  };
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using namespace config_detail;
  RunConfig c;
  try {
    check_keys(j, {"seed", "out_dir", "data", "model", "loss", "train", "eval"}, "");
    get(j, "seed", c.seed);
    get(j, "out_dir", c.out_dir);
    if (j.contains("data")) {
      const json& d = j["data"];
      check_keys(d, {"domains", "classes_per_domain", "samples_per_class", "held_out", "folds", "fold", "data_dir"},
                 "data");
      if (d.contains("domains")) {
        c.data.domains.clear();
        for (std::size_t i = 0; i < d["domains"].size(); ++i) {
          c.data.domains.push_back(domain_from_json(d["domains"][i], "data.domains[" + std::to_string(i) + "]"));
        }
      }
      get(d, "classes_per_domain", c.data.classes_per_domain);
      get(d, "samples_per_class", c.data.samples_per_class);
      get(d, "held_out", c.data.held_out);
      get(d, "folds", c.data.folds);
      get(d, "fold", c.data.fold);
      get(d, "data_dir", c.data.data_dir);
    }
    if (j.contains("model")) {
      const json& m = j["model"];
      check_keys(m, {"encoder", "mask_channels", "token_dim", "mask_upsample", "use_cdtap", "use_mff",
                     "prompt_combine", "anchor_rcond", "standardize_prompt_inputs"},
                 "model");
      if (m.contains("encoder")) {
        const json& e = m["encoder"];
        check_keys(e, {"image_size", "in_channels", "patch_size", "depth", "early_block_index", "channels", "heads",
                       "mlp_ratio"},
                   "model.encoder");
        EncoderConfig& ec = c.model.encoder;
        get(e, "image_size", ec.image_size);
        get(e, "in_channels", ec.in_channels);
        get(e, "patch_size", ec.patch_size);
        get(e, "depth", ec.depth);
        get(e, "early_block_index", ec.early_block_index);
        get(e, "channels", ec.channels);
        get(e, "heads", ec.heads);
        get(e, "mlp_ratio", ec.mlp_ratio);
      }
      get(m, "mask_channels", c.model.mask_channels);
      get(m, "token_dim", c.model.token_dim);
      get(m, "mask_upsample", c.model.mask_upsample);
      get(m, "use_cdtap", c.model.use_cdtap);
      get(m, "use_mff", c.model.use_mff);
      if (m.contains("prompt_combine")) c.model.prompt_combine = parse_prompt_combine(m["prompt_combine"]);
      get(m, "anchor_rcond", c.model.anchor_rcond);
      get(m, "standardize_prompt_inputs", c.model.standardize_prompt_inputs);
    }
    if (j.contains("loss")) {
      check_keys(j["loss"], {"lambda", "eps_dice"}, "loss");
      get(j["loss"], "lambda", c.loss.lambda);
      get(j["loss"], "eps_dice", c.loss.eps_dice);
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      check_keys(t, {"epochs", "episodes_per_epoch", "shot", "max_shot", "learning_rate", "trainable_namespaces", "tau_min",
                     "tau_max", "augment", "augmentation", "max_resample", "target_shots_for_adaptation"},
                 "train");
      TrainConfig& tc = c.train;
      get(t, "epochs", tc.epochs);
      get(t, "episodes_per_epoch", tc.episodes_per_epoch);
      get(t, "shot", tc.shot);
      get(t, "max_shot", tc.max_shot);
      get(t, "learning_rate", tc.learning_rate);
      get(t, "trainable_namespaces", tc.trainable_namespaces);
      get(t, "tau_min", tc.tau_min);
      get(t, "tau_max", tc.tau_max);
      get(t, "augment", tc.augment);
      if (t.contains("augmentation")) tc.augmentation = augment_from_json(t["augmentation"], "train.augmentation");
      get(t, "max_resample", tc.max_resample);
      get(t, "target_shots_for_adaptation", tc.target_shots_for_adaptation);
    }
    if (j.contains("eval")) {
      check_keys(j["eval"], {"shots", "episodes"}, "eval");
      get(j["eval"], "shots", c.eval.shots);
      get(j["eval"], "episodes", c.eval.episodes);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace tavp

#endif  // TAVP_CONFIG_HPP_
