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
#ifndef TAVP_LOSSES_HPP_
#define TAVP_LOSSES_HPP_

// Segmentation and dense-embedding losses as fused tape operations.

#include <cmath>
#include <string>

#include "tavp/image.hpp"
#include "tavp/ops.hpp"

namespace tavp {

struct LossConfig {
  double lambda = 0.5;
  double eps_dice = 1e-6;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("loss lambda must lie in [0, 1]");
    if (!(eps_dice > 0.0)) throw ConfigError("eps_dice must be > 0");
  }
};

namespace losses {
namespace detail {

inline void require_match(const Shape& a, const Tensor& mask, const char* what) {
  if (a != mask.shape()) {
    throw ShapeError(std::string(what) + ": prediction " + shape_str(a) + " vs mask " + shape_str(mask.shape()));
  }
}

// log(1 + exp(-|z|)) + max(z, 0) - z m
inline double bce_term(double z, double m) {
  return std::max(z, 0.0) - z * m + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace detail

// 1 - (2 sum(p m) + eps) / (sum(p) + sum(m) + eps)
inline Var dice_loss(const Var& probs, const Tensor& mask, double eps = 1e-6) {
  detail::require_match(probs.shape(), mask, "dice_loss");
  const Tensor& p = probs.value();
  double inter = 0.0, sp = 0.0, sm = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * mask[i];
    sp += p[i];
    sm += mask[i];
  }
  const double num = 2.0 * inter + eps, den = sp + sm + eps;
  Tensor out({1}, 1.0 - num / den);
  return probs.graph().record(std::move(out), {probs},
                              [mask, num, den](const Tensor& g, std::span<Tensor* const> gi) {
                                const double d2 = den * den;
                                for (std::size_t i = 0; i < mask.size(); ++i) {
                                  (*gi[0])[i] -= g[0] * (2.0 * mask[i] * den - num) / d2;
                                }
                              });
}

// Mean binary cross-entropy from logits.
inline Var bce_loss(const Var& logits, const Tensor& mask) {
  detail::require_match(logits.shape(), mask, "bce_loss");
  const Tensor& z = logits.value();
  const double n = static_cast<double>(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += detail::bce_term(z[i], mask[i]);
  Tensor out({1}, total / n);
  return logits.graph().record(std::move(out), {logits},
                               [mask, n, z](const Tensor& g, std::span<Tensor* const> gi) {
                                 for (std::size_t i = 0; i < z.size(); ++i) {
                                   (*gi[0])[i] += g[0] * (ops::detail::stable_sigmoid(z[i]) - mask[i]) / n;
                                 }
                               });
}

// Mean cross-entropy. H x W logits are a single foreground logit against an
// implicit zero background logit, which coincides with bce_loss. C x H x W
// logits use a softmax over C classes with the mask holding class indices.
inline Var ce_loss(const Var& logits, const Tensor& mask) {
  if (logits.value().rank() == 2) return bce_loss(logits, mask);
  require_rank(logits.value(), 3, "ce_loss logits");
  const int c = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  if (mask.shape() != Shape{logits.dim(1), logits.dim(2)}) {
    throw ShapeError("ce_loss: logits " + shape_str(logits.shape()) + " vs mask " + shape_str(mask.shape()));
  }
  const Tensor& z = logits.value();
  Tensor probs(z.shape());
  double total = 0.0;
  for (int i = 0; i < hw; ++i) {
    const int label = static_cast<int>(mask[i]);
    if (label < 0 || label >= c) throw ShapeError("ce_loss: label out of range");
    double mx = z[i];
    for (int k = 1; k < c; ++k) mx = std::max(mx, z[static_cast<std::size_t>(k) * hw + i]);
    double s = 0.0;
    for (int k = 0; k < c; ++k) s += std::exp(z[static_cast<std::size_t>(k) * hw + i] - mx);
    const double lse = mx + std::log(s);
    for (int k = 0; k < c; ++k) probs[static_cast<std::size_t>(k) * hw + i] = std::exp(z[static_cast<std::size_t>(k) * hw + i] - lse);
    total += lse - z[static_cast<std::size_t>(label) * hw + i];
  }
  Tensor out({1}, total / hw);
  return logits.graph().record(std::move(out), {logits},
                               [probs, mask, c, hw](const Tensor& g, std::span<Tensor* const> gi) {
                                 for (int k = 0; k < c; ++k)
                                   for (int i = 0; i < hw; ++i) {
                                     const std::size_t idx = static_cast<std::size_t>(k) * hw + i;
                                     const double target = static_cast<int>(mask[i]) == k ? 1.0 : 0.0;
                                     (*gi[0])[idx] += g[0] * (probs[idx] - target) / hw;
                                   }
                               });
}

// (1 - lambda) CE + lambda Dice(sigmoid(logits)).
inline Var seg_loss(const Var& logits, const Tensor& mask, const LossConfig& config) {
  config.validate();
  const Var ce = ce_loss(logits, mask);
  const Var dice = dice_loss(ops::sigmoid(logits), mask, config.eps_dice);
  return ops::add(ops::scale(ce, 1.0 - config.lambda), ops::scale(dice, config.lambda));
}

// Mask resampled (nearest) to the logit resolution, as 0/1 values.
inline Tensor align_mask(const Mask& mask, int h, int w) {
  if (h <= 0 || w <= 0) throw ShapeError("align_mask: non-positive size");
  return resize_nearest(mask, h, w).to_tensor();
}

// BCE + Dice on the dense embedding's mask-logit channel.
inline Var dem_loss(const Var& z_logits, const Tensor& mask, double eps = 1e-6) {
  return ops::add(bce_loss(z_logits, mask), dice_loss(ops::sigmoid(z_logits), mask, eps));
}

inline Var dem_loss(const Var& z_logits, const Mask& mask, double eps = 1e-6) {
  require_rank(z_logits.value(), 2, "dem_loss logits");
  return dem_loss(z_logits, align_mask(mask, z_logits.dim(0), z_logits.dim(1)), eps);
}

inline Var total_loss(const Var& seg, const Var& dem) { return ops::add(seg, dem); }
inline double total_loss(double seg, double dem) { return seg + dem; }

}  // namespace losses
}  // namespace tavp

#endif  // TAVP_LOSSES_HPP_
