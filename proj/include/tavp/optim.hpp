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
#ifndef TAVP_OPTIM_HPP_
#define TAVP_OPTIM_HPP_

#include <cmath>
#include <map>
#include <string>

#include "tavp/nn.hpp"

namespace tavp {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("adam eps must be > 0");
  }
};

struct AdamMoments {
  Tensor m;
  Tensor v;
};

// Adaptive-moment optimizer. Only trainable parameters with a gradient are
// touched; moments are keyed by parameter name.
class Adam {
 public:
  Adam() = default;
  explicit Adam(const AdamConfig& config) : config_(config) { config_.validate(); }

  const AdamConfig& config() const { return config_; }
  long step_count() const { return step_; }
  std::map<std::string, AdamMoments>& moments() { return moments_; }
  const std::map<std::string, AdamMoments>& moments() const { return moments_; }
  void set_step_count(long s) { step_ = s; }

  void step(const ParameterList& params) {
    ++step_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (Parameter* p : params) {
      if (!p->trainable || p->grad.empty()) continue;
      AdamMoments& st = moments_[p->name];
      if (st.m.empty()) {
        st.m = Tensor::zeros_like(p->value);
        st.v = Tensor::zeros_like(p->value);
      }
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        const double g = p->grad[i];
        st.m[i] = config_.beta1 * st.m[i] + (1.0 - config_.beta1) * g;
        st.v[i] = config_.beta2 * st.v[i] + (1.0 - config_.beta2) * g * g;
        p->value[i] -= config_.learning_rate * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + config_.eps);
      }
    }
  }

 private:
  AdamConfig config_;
  long step_ = 0;
  std::map<std::string, AdamMoments> moments_;
};

inline void zero_grad(const ParameterList& params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace tavp

#endif  // TAVP_OPTIM_HPP_
