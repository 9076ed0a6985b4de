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
#ifndef TAVP_TRAINER_HPP_
#define TAVP_TRAINER_HPP_

// Episodic fine-tuning of the trainable namespaces on a frozen encoder.

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tavp/datasets.hpp"
#include "tavp/losses.hpp"
#include "tavp/model.hpp"
#include "tavp/optim.hpp"

namespace tavp {

struct TrainConfig {
  int epochs = 80;
  int episodes_per_epoch = 50;
  int shot = 1;
  int max_shot = 0;  // > shot: each episode draws its shot uniformly from [shot, max_shot]
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  std::set<std::string> trainable_namespaces{"cdtap", "mff", "decoder_heads"};
  double tau_min = 0.02;
  double tau_max = 0.98;
  double lambda = 0.5;
  bool augment = false;
  AugmentPolicy augmentation = AugmentPolicy::standard();
  int max_resample = 20;
  // > 0: each episode is one target image as support and an augmented copy
  // of it as query (single-image adaptation regime).
  int target_shots_for_adaptation = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (episodes_per_epoch < 0) throw ConfigError("episodes_per_epoch must be >= 0");
    if (shot < 1) throw ConfigError("shot must be >= 1");
    if (max_shot != 0 && max_shot < shot) throw ConfigError("max_shot must be 0 or >= shot");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (trainable_namespaces.count("backbone")) throw ConfigError("the backbone cannot be a trainable namespace");
    for (const std::string& n : trainable_namespaces) {
      if (!known_namespaces().count(n)) throw ConfigError("unknown namespace '" + n + "'");
    }
    if (!(0.0 <= tau_min && tau_min < tau_max && tau_max <= 1.0)) {
      throw ConfigError("need 0 <= tau_min < tau_max <= 1");
    }
    LossConfig{lambda, 1e-6}.validate();
    if (max_resample < 1) throw ConfigError("max_resample must be >= 1");
    if (target_shots_for_adaptation < 0) throw ConfigError("target_shots_for_adaptation must be >= 0");
    augmentation.validate();
  }
};

struct StepMetrics {
  long step = 0;
  std::uint64_t episode_seed = 0;
  double seg = 0.0;
  double dem = 0.0;
  double total = 0.0;
  std::map<std::string, double> grad_norms;  // every namespace, 0 when absent
  int rejects = 0;
  bool forced_accept = false;
  bool fg_fallback = false;
  bool bg_fallback = false;
};

struct EpochMetrics {
  int epoch = 0;
  int steps = 0;
  double seg = 0.0;
  double dem = 0.0;
  double total = 0.0;
  int rejects = 0;
  int forced_accepts = 0;
  int fallbacks = 0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

inline nlohmann::json to_json(const StepMetrics& m) {
  return {{"step", m.step},       {"episode_seed", m.episode_seed}, {"seg", m.seg},
          {"dem", m.dem},         {"total", m.total},               {"grad_norms", m.grad_norms},
          {"rejects", m.rejects}, {"forced_accept", m.forced_accept}, {"fg_fallback", m.fg_fallback},
          {"bg_fallback", m.bg_fallback}};
}

inline nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},   {"steps", m.steps},     {"seg", m.seg},
          {"dem", m.dem},       {"total", m.total},     {"rejects", m.rejects},
          {"forced_accepts", m.forced_accepts}, {"fallbacks", m.fallbacks}};
}

inline EpochMetrics epoch_from_json(const nlohmann::json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch");
  m.steps = j.at("steps");
  m.seg = j.at("seg");
  m.dem = j.at("dem");
  m.total = j.at("total");
  m.rejects = j.at("rejects");
  m.forced_accepts = j.at("forced_accepts");
  m.fallbacks = j.at("fallbacks");
  return m;
}

struct SampledEpisode {
  Episode episode;
  int rejects = 0;
  bool forced = false;
};

class Trainer {
 public:
  Trainer(TavpModel& model, const TrainConfig& config) : model_(model), config_(config) {
    config_.validate();
    model_.set_trainable_namespaces(config_.trainable_namespaces);
    AdamConfig ac;
    ac.learning_rate = config_.learning_rate;
    adam_ = Adam(ac);
  }

  const TrainConfig& config() const { return config_; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }
  const std::vector<EpochMetrics>& history() const { return history_; }
  void set_history(std::vector<EpochMetrics> h) { history_ = std::move(h); }
  long global_step() const { return global_step_; }
  void set_global_step(long s) { global_step_ = s; }
  int epochs_done() const { return static_cast<int>(history_.size()); }
  FeatureCache& cache() { return cache_; }
  void set_metrics_log(const std::string& path) { log_path_ = path; }
  void set_step_callback(std::function<void(const StepMetrics&)> cb) { on_step_ = std::move(cb); }

  // Draws a training episode: a random domain, then a class-consistent
  // episode, resampled while the foreground-ratio filter rejects it.
  SampledEpisode sample(const std::vector<Dataset>& datasets, std::uint64_t seed) const {
    if (datasets.empty()) throw SamplingError("no training datasets");
    Rng rng(seed);
    const Dataset& ds = datasets[uniform_int(rng, 0, static_cast<int>(datasets.size()) - 1)];
    SampledEpisode out;
    if (config_.target_shots_for_adaptation > 0) {
      const Sample& base = ds.samples[uniform_int(rng, 0, static_cast<int>(ds.samples.size()) - 1)];
      std::vector<Sample> support(config_.target_shots_for_adaptation, base);
      const Sample query = augment(base, config_.augmentation, mix_seed(seed, 99));
      out.episode = Episode(std::move(support), query);
      return out;
    }
    const int shot = config_.max_shot > config_.shot ? uniform_int(rng, config_.shot, config_.max_shot) : config_.shot;
    for (int attempt = 0; attempt < config_.max_resample; ++attempt) {
      out.episode = sample_episode(ds, shot, mix_seed(seed, static_cast<std::uint64_t>(attempt)));
      if (accept_episode(out.episode, config_.tau_min, config_.tau_max)) return out;
      ++out.rejects;
    }
    out.forced = true;
    return out;
  }

  Episode maybe_augment(Episode ep, std::uint64_t seed) const {
    if (!config_.augment) return ep;
    const AugmentPolicy& policy = config_.augmentation;
    std::vector<Sample> support;
    for (std::size_t k = 0; k < ep.support.size(); ++k) {
      support.push_back(augment(ep.support[k], policy, mix_seed(seed, 1000 + k)));
    }
    return Episode(std::move(support), augment(ep.query, policy, mix_seed(seed, 2000)));
  }

  // One forward/backward/update on `ep`.
  StepMetrics training_step(const Episode& ep, std::uint64_t episode_seed = 0) {
    ParameterList all = model_.parameters();
    zero_grad(all);
    std::vector<std::shared_ptr<const FeaturePyramid>> support;
    std::vector<const FeaturePyramid*> ptrs;
    std::vector<Mask> masks;
    for (const Sample& s : ep.support) {
      support.push_back(cache_.get(model_, s));
      ptrs.push_back(support.back().get());
      masks.push_back(s.mask);
    }
    const auto query = cache_.get(model_, ep.query);

    Graph g;
    const ModelOutput out = model_.forward(g, ptrs, masks, *query, ep.query.image);
    const int res = out.logits.dim(0);
    const Tensor target = losses::align_mask(ep.query.mask, res, out.logits.dim(1));
    const LossConfig lc{config_.lambda, 1e-6};
    const Var seg = losses::seg_loss(out.logits, target, lc);
    Var total = seg;
    StepMetrics m;
    m.episode_seed = episode_seed;
    m.seg = seg.value()[0];
    if (out.dense_logit.valid()) {
      const Var dem = losses::dem_loss(out.dense_logit, ep.query.mask, lc.eps_dice);
      m.dem = dem.value()[0];
      total = losses::total_loss(seg, dem);
    }
    m.total = total.value()[0];
    m.fg_fallback = out.fg_fallback;
    m.bg_fallback = out.bg_fallback;
    if (!std::isfinite(m.total)) {
      throw TrainingDiverged("non-finite loss (seg " + std::to_string(m.seg) + ", dem " + std::to_string(m.dem) +
                                 ") at episode seed " + std::to_string(episode_seed),
                             episode_seed);
    }
    g.backward(total);
    for (const std::string& n : known_namespaces()) m.grad_norms[n] = 0.0;
    for (Parameter* p : all) m.grad_norms[p->name_space()] += p->grad_squared_norm();
    for (auto& [n, v] : m.grad_norms) v = std::sqrt(v);
    adam_.step(all);
    return m;
  }

  // Runs the remaining epochs. Episode seeds depend only on the global step,
  // so a resumed run continues the same stream.
  void train(const std::vector<Dataset>& datasets) {
    if (config_.trainable_namespaces.empty()) throw ConfigError("at least one trainable namespace is required");
    if (datasets.empty()) throw SamplingError("no training datasets");
    std::unique_ptr<std::ofstream> log;
    if (!log_path_.empty()) {
      log = std::make_unique<std::ofstream>(log_path_, std::ios::app);
      if (!*log) throw IoError("cannot open metrics log " + log_path_);
    }
    for (int epoch = epochs_done(); epoch < config_.epochs; ++epoch) {
      EpochMetrics em;
      em.epoch = epoch;
      for (int e = 0; e < config_.episodes_per_epoch; ++e) {
        const std::uint64_t seed = mix_seed(config_.seed, static_cast<std::uint64_t>(global_step_));
        SampledEpisode se = sample(datasets, seed);
        const Episode ep = maybe_augment(std::move(se.episode), seed);
        StepMetrics m = training_step(ep, seed);
        m.step = global_step_++;
        m.rejects = se.rejects;
        m.forced_accept = se.forced;
        em.steps += 1;
        em.seg += m.seg;
        em.dem += m.dem;
        em.total += m.total;
        em.rejects += m.rejects;
        em.forced_accepts += m.forced_accept ? 1 : 0;
        em.fallbacks += (m.fg_fallback || m.bg_fallback) ? 1 : 0;
        if (log) *log << to_json(m).dump() << "\n";
        if (on_step_) on_step_(m);
      }
      if (em.steps > 0) {
        em.seg /= em.steps;
        em.dem /= em.steps;
        em.total /= em.steps;
      }
      history_.push_back(em);
      spdlog::info("epoch {} steps {} loss {:.4f} (seg {:.4f} dem {:.4f}) rejects {} fallbacks {}", epoch, em.steps,
                   em.total, em.seg, em.dem, em.rejects, em.fallbacks);
    }
  }

 private:
  TavpModel& model_;
  TrainConfig config_;
  Adam adam_;
  FeatureCache cache_;
  std::vector<EpochMetrics> history_;
  long global_step_ = 0;
  std::string log_path_;
  std::function<void(const StepMetrics&)> on_step_;
};

}  // namespace tavp

#endif  // TAVP_TRAINER_HPP_
