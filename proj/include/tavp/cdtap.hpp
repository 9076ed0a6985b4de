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
#ifndef TAVP_CDTAP_HPP_
#define TAVP_CDTAP_HPP_

// Class-domain task-adaptive auto-prompting: masked prototype pooling,
// cycle-consistent support<->query matching, the anchor transform W P = A and
// the dense auto-prompt network.

#include <spdlog/spdlog.h>

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tavp/backbone.hpp"
#include "tavp/datasets.hpp"

namespace tavp {

inline constexpr double kPoolEpsilon = 1e-8;

enum class Region { kForeground, kBackground };
enum class PrototypeSource { kSupport, kQuery };

struct Prototype {
  Tensor vector;  // length C_l
  Region kind = Region::kForeground;
  PrototypeSource source = PrototypeSource::kSupport;
};

struct PrototypePair {
  Prototype fg;
  Prototype bg;
};

// Mask-weighted average of feature vectors. The mask is bilinearly resampled
// to the feature grid; background pooling uses the complement.
inline Prototype masked_prototype(const Tensor& feature, const Mask& mask, Region region,
                                  PrototypeSource source = PrototypeSource::kSupport) {
  require_rank(feature, 3, "masked_prototype feature");
  const int c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  const Mask m = region == Region::kForeground ? mask : mask.complement();
  if (m.count() == 0) {
    throw DegenerateMaskError(std::string("mask has no ") +
                              (region == Region::kForeground ? "foreground" : "background") + " pixels");
  }
  const Tensor weights = mask_weights(m, h, w);
  const double total = weights.sum();
  if (total < kPoolEpsilon) {
    throw DegenerateMaskError("downsampled mask weight " + std::to_string(total) + " is below epsilon");
  }
  Prototype p;
  p.kind = region;
  p.source = source;
  p.vector = Tensor({c});
  for (int ci = 0; ci < c; ++ci) {
    double s = 0.0;
    for (int i = 0; i < h * w; ++i) s += feature[static_cast<std::size_t>(ci) * h * w + i] * weights[i];
    p.vector[ci] = s / total;
  }
  return p;
}

// Mean of per-shot prototypes.
inline Prototype average_prototypes(const std::vector<Prototype>& shots) {
  if (shots.empty()) throw Error("no prototypes to average");
  Prototype out = shots[0];
  for (std::size_t k = 1; k < shots.size(); ++k) out.vector += shots[k].vector;
  for (double& v : out.vector.values()) v /= static_cast<double>(shots.size());
  return out;
}

inline Prototype normalized(Prototype p) {
  const double n = std::sqrt(p.vector.squared_norm());
  if (!(n > 0.0) || !std::isfinite(n)) throw Error("cannot normalize a zero-norm prototype");
  for (double& v : p.vector.values()) v /= n;
  return p;
}

inline PrototypePair normalize_pair(const Prototype& fg, const Prototype& bg) {
  return PrototypePair{normalized(fg), normalized(bg)};
}

// ---------------------------------------------------------------------------
// Cycle-consistent matching

struct GridPos {
  int row = 0;
  int col = 0;
  friend bool operator==(const GridPos&, const GridPos&) = default;
};

struct MatchIndex {
  int shot = 0;
  GridPos support_pos;  // masked support position the forward step started from
  GridPos i_s2q;        // best query position for it
  GridPos j_q2s;        // best support position for that query position
  bool cycle_consistent = false;
  friend bool operator==(const MatchIndex&, const MatchIndex&) = default;
};

struct RegionMatch {
  Prototype query_prototype;  // unnormalized
  std::vector<MatchIndex> matches;
  bool fallback = false;      // no consistent match survived; support prototype used
};

struct CycleMatchResult {
  RegionMatch fg;
  RegionMatch bg;
};

namespace detail {

using ColMat = Eigen::MatrixXd;

// Columns are L2-normalized feature vectors, one per grid position.
inline ColMat normalized_columns(const Tensor& feature) {
  const int c = feature.dim(0), n = feature.dim(1) * feature.dim(2);
  ColMat m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      feature.data(), c, n);
  for (int j = 0; j < n; ++j) {
    const double norm = m.col(j).norm();
    if (norm > 0) m.col(j) /= norm;
  }
  return m;
}

// sims(p, q) = cosine of support position p and query position q. Every entry
// is accumulated in the same channel order so identical features tie exactly.
inline Eigen::MatrixXd cosine_table(const ColMat& support, const ColMat& query) {
  const int c = static_cast<int>(support.rows());
  const int ns = static_cast<int>(support.cols()), nq = static_cast<int>(query.cols());
  Eigen::MatrixXd sims(ns, nq);
  for (int p = 0; p < ns; ++p) {
    const double* a = support.col(p).data();
    for (int q = 0; q < nq; ++q) {
      const double* b = query.col(q).data();
      double dot = 0.0;
      for (int k = 0; k < c; ++k) dot += a[k] * b[k];
      sims(p, q) = dot;
    }
  }
  return sims;
}

// Index of the maximum; ties go to the lowest index.
template <typename Vec>
int first_argmax(const Vec& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline RegionMatch match_region(const std::vector<Tensor>& support_feats, const std::vector<Mask>& support_masks,
                                const std::vector<Eigen::MatrixXd>& sims, const Tensor& query_feat,
                                Region region) {
  const int c = query_feat.dim(0), h = query_feat.dim(1), w = query_feat.dim(2);
  RegionMatch out;
  Tensor acc({c});
  double weight_sum = 0.0;
  std::vector<Prototype> support_protos;
  for (std::size_t k = 0; k < support_feats.size(); ++k) {
    support_protos.push_back(masked_prototype(support_feats[k], support_masks[k], region));
    const Mask m = region == Region::kForeground ? support_masks[k] : support_masks[k].complement();
    const Tensor weights = mask_weights(m, h, w);
    for (int p = 0; p < h * w; ++p) {
      if (weights[p] <= 0.0) continue;
      const int i = first_argmax(sims[k].row(p));
      const int j = first_argmax(sims[k].col(i));
      MatchIndex mi;
      mi.shot = static_cast<int>(k);
      mi.support_pos = {p / w, p % w};
      mi.i_s2q = {i / w, i % w};
      mi.j_q2s = {j / w, j % w};
      mi.cycle_consistent = weights[j] > 0.0;
      if (mi.cycle_consistent) {
        for (int ci = 0; ci < c; ++ci) acc[ci] += weights[p] * query_feat[static_cast<std::size_t>(ci) * h * w + i];
        weight_sum += weights[p];
      }
      out.matches.push_back(mi);
    }
  }
  out.query_prototype.kind = region;
  out.query_prototype.source = PrototypeSource::kQuery;
  if (weight_sum < kPoolEpsilon) {
    out.fallback = true;
    out.query_prototype.vector = average_prototypes(support_protos).vector;
  } else {
    for (double& v : acc.values()) v /= weight_sum;
    out.query_prototype.vector = std::move(acc);
  }
  return out;
}

}  // namespace detail

// Forward step: every masked support position picks its most similar query
// position (cosine similarity, lowest row-major index on ties). Backward step:
// that query position picks its most similar support position. A match is
// kept when the backward pick lies inside the support region; kept query
// features are averaged with the support pooling weights into the enhanced
// query prototype.
inline CycleMatchResult cycle_match(const std::vector<Tensor>& support_feats,
                                    const std::vector<Mask>& support_masks, const Tensor& query_feat) {
  if (support_feats.empty() || support_feats.size() != support_masks.size()) {
    throw ShapeError("cycle_match needs one mask per support feature map");
  }
  require_rank(query_feat, 3, "cycle_match query");
  for (const Tensor& f : support_feats) {
    if (f.shape() != query_feat.shape()) {
      throw ShapeError("cycle_match: support " + shape_str(f.shape()) + " vs query " + shape_str(query_feat.shape()));
    }
  }
  const detail::ColMat query_cols = detail::normalized_columns(query_feat);
  std::vector<Eigen::MatrixXd> sims;
  for (const Tensor& f : support_feats) sims.push_back(detail::cosine_table(detail::normalized_columns(f), query_cols));
  CycleMatchResult r;
  r.fg = detail::match_region(support_feats, support_masks, sims, query_feat, Region::kForeground);
  r.bg = detail::match_region(support_feats, support_masks, sims, query_feat, Region::kBackground);
  return r;
}

// ---------------------------------------------------------------------------
// Anchor transform

struct AnchorTransform {
  Tensor W;  // C_l x C_l
  Tensor P;  // r x C_l
  Tensor A;  // r x C_l
  Tensor pinv;  // (P^T)^+, r x C_l; W = A^T pinv
  int rank = 0;
  bool rank_deficient = false;
  double residual = 0.0;  // ||W P^T - A^T||_F
};

// Minimum-norm least-squares W for W P^T = A^T. `rcond` is the relative
// singular-value threshold below which directions count as rank-deficient
// (0 keeps Eigen's default).
inline AnchorTransform solve_transform(const Tensor& P, const Tensor& A, double rcond = 0.0,
                                       bool warn = true) {
  require_rank(P, 2, "solve_transform P");
  if (A.shape() != P.shape()) {
    throw ShapeError("solve_transform: A " + shape_str(A.shape()) + " vs P " + shape_str(P.shape()));
  }
  const int r = P.dim(0), c = P.dim(1);
  using RowMat = ops::RowMat;
  const Eigen::Map<const RowMat> pm(P.data(), r, c), am(A.data(), r, c);
  for (int i = 0; i < r; ++i) {
    if (pm.row(i).isZero(0.0)) throw Error("solve_transform: P row " + std::to_string(i) + " is all zero");
  }
  const Eigen::MatrixXd pt = pm.transpose();  // c x r
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
  if (rcond > 0.0) cod.setThreshold(rcond);
  cod.compute(pt);
  AnchorTransform t;
  t.P = P;
  t.A = A;
  t.rank = static_cast<int>(cod.rank());
  t.rank_deficient = t.rank < std::min(r, c);
  if (t.rank_deficient && warn) {
    spdlog::warn("solve_transform: prototype matrix has rank {} < {}; using the minimum-norm solution", t.rank,
                 std::min(r, c));
  }
  const Eigen::MatrixXd pinv = cod.pseudoInverse();  // r x c
  t.pinv = Tensor({r, c});
  Eigen::Map<RowMat>(t.pinv.data(), r, c) = pinv;
  t.W = Tensor({c, c});
  Eigen::Map<RowMat> wm(t.W.data(), c, c);
  wm = am.transpose() * pinv;
  t.residual = (wm * pt - am.transpose()).norm();
  return t;
}

// Left-multiplies every channel vector of a C x H x W map by W.
inline Tensor apply_transform(const Tensor& W, const Tensor& features) {
  require_rank(W, 2, "apply_transform W");
  require_rank(features, 3, "apply_transform features");
  const int c = features.dim(0), hw = features.dim(1) * features.dim(2);
  if (W.dim(0) != c || W.dim(1) != c) {
    throw ShapeError("apply_transform: W " + shape_str(W.shape()) + " vs features " + shape_str(features.shape()));
  }
  Tensor out(features.shape());
  ops::as_mat(out, c, hw).noalias() = ops::as_mat(W, c, c) * ops::as_mat(features, c, hw);
  return out;
}

inline Var apply_transform(const Var& W, const Var& features) {
  require_rank(features.value(), 3, "apply_transform features");
  const int c = features.dim(0), h = features.dim(1), w = features.dim(2);
  if (W.shape() != Shape{c, c}) {
    throw ShapeError("apply_transform: W " + shape_str(W.shape()) + " vs features " + shape_str(features.shape()));
  }
  return ops::reshape(ops::matmul(W, ops::reshape(features, {c, h * w})), {c, h, w});
}

// ---------------------------------------------------------------------------
// Dense auto-prompt network

struct DensePromptConfig {
  int image_channels = 3;
  int prior_channels = 4;
  int out_channels = 8;  // C_p; channel 0 is the mask logit
  std::vector<int> down_channels{8, 8, 16, 16};
  int up_channels = 8;

  int in_channels() const { return image_channels + prior_channels; }
};

// Four stride-2 3x3 convolutions down, two stride-4 transposed convolutions
// up, and a 3x3 head over the upsampled features concatenated with the input.
class DensePromptNet {
 public:
  DensePromptNet() = default;
  DensePromptNet(const DensePromptConfig& config, std::uint64_t seed) : config_(config) {
    if (config_.down_channels.size() != 4) throw ConfigError("dense prompt net needs 4 down layers");
    Rng rng(seed);
    int in = config_.in_channels();
    for (std::size_t i = 0; i < config_.down_channels.size(); ++i) {
      down_.emplace_back("cdtap.dense.down" + std::to_string(i), in, config_.down_channels[i], 3, 2, 1, rng);
      in = config_.down_channels[i];
    }
    up1_ = ConvTranspose2d("cdtap.dense.up1", in, config_.up_channels, 4, 4, rng);
    up2_ = ConvTranspose2d("cdtap.dense.up2", config_.up_channels, config_.up_channels, 4, 4, rng);
    head_ = Conv2d("cdtap.dense.head", config_.up_channels + config_.in_channels(), config_.out_channels, 3, 1, 1,
                   rng);
  }

  const DensePromptConfig& config() const { return config_; }

  // input: (image_channels + prior_channels) x S x S with S divisible by 16.
  // The result is resampled to out_size x out_size.
  Var forward(Graph& g, const Var& input, int out_size) {
    require_rank(input.value(), 3, "dense prompt input");
    if (input.dim(0) != config_.in_channels()) {
      throw ShapeError("dense prompt: expected " + std::to_string(config_.in_channels()) + " input channels, got " +
                       std::to_string(input.dim(0)));
    }
    const int s = input.dim(1);
    if (s % 16 != 0 || input.dim(2) != s) throw ShapeError("dense prompt input must be square with size % 16 == 0");
    Var x = input;
    for (Conv2d& c : down_) x = ops::relu(c(g, x));
    x = ops::relu(up1_(g, x));
    x = ops::relu(up2_(g, x));
    Var z = head_(g, ops::concat_channels({x, input}));
    if (out_size == s) return z;
    if (s % out_size == 0) return ops::avg_pool2d(z, s / out_size);
    if (out_size % s == 0) return ops::upsample_nearest(z, out_size / s);
    throw ShapeError("dense prompt cannot align " + std::to_string(s) + " to " + std::to_string(out_size));
  }

  ParameterList parameters() {
    ParameterList out;
    for (Conv2d& c : down_) c.collect(out);
    up1_.collect(out);
    up2_.collect(out);
    head_.collect(out);
    return out;
  }

 private:
  DensePromptConfig config_;
  std::vector<Conv2d> down_;
  ConvTranspose2d up1_, up2_;
  Conv2d head_;
};

// Per-channel zero mean, unit variance over the spatial extent of a C x H x W
// map. Constant channels become zero.
inline Tensor standardize_channels(const Tensor& t, double eps = 1e-6) {
  require_rank(t, 3, "standardize_channels");
  const int c = t.dim(0), n = t.dim(1) * t.dim(2);
  Tensor out(t.shape());
  for (int k = 0; k < c; ++k) {
    const double* src = t.data() + static_cast<std::size_t>(k) * n;
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += src[i];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
    const double inv = 1.0 / std::sqrt(var / n + eps);
    double* dst = out.data() + static_cast<std::size_t>(k) * n;
    for (int i = 0; i < n; ++i) dst[i] = (src[i] - mean) * inv;
  }
  return out;
}

// Stacks the image (C x S x S) with the prior maps (resampled bilinearly to S).
inline Tensor dense_prompt_input(const Image& image, const Tensor* prior, int prior_channels) {
  const int s = image.height;
  Tensor in({image.channels + prior_channels, s, image.width});
  const Tensor img = image.to_tensor();
  std::copy(img.values().begin(), img.values().end(), in.data());
  if (prior != nullptr && prior_channels > 0) {
    require_rank(*prior, 3, "dense prompt prior");
    if (prior->dim(0) != prior_channels) throw ShapeError("dense prompt prior channel count");
    const int ph = prior->dim(1), pw = prior->dim(2);
    for (int c = 0; c < prior_channels; ++c) {
      Image plane(ph, pw, 1);
      for (int i = 0; i < ph * pw; ++i) plane.data[i] = static_cast<float>((*prior)[static_cast<std::size_t>(c) * ph * pw + i]);
      const Image up = resize_bilinear(plane, s, image.width);
      for (int i = 0; i < s * image.width; ++i) {
        in[static_cast<std::size_t>(image.channels + c) * s * image.width + i] = up.data[i];
      }
    }
  }
  return in;
}

// Cosine similarity of every query position to each prototype: r x H x W.
inline Tensor similarity_prior(const Tensor& feature, const std::vector<const Prototype*>& protos) {
  const int c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  Tensor out({static_cast<int>(protos.size()), h, w});
  const detail::ColMat cols = detail::normalized_columns(feature);
  for (std::size_t k = 0; k < protos.size(); ++k) {
    const Eigen::Map<const Eigen::VectorXd> pv(protos[k]->vector.data(), c);
    const double pn = pv.norm();
    for (int i = 0; i < h * w; ++i) {
      out[k * h * w + i] = pn > 0 ? cols.col(i).dot(pv) / pn : 0.0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Module

struct CdtapConfig {
  int feature_channels = 64;  // C_l
  int token_dim = 64;         // D
  int mask_channels = 8;      // C_p = C_m
  double rcond = 1e-2;        // rank threshold for the per-episode solve
  bool standardize_inputs = true;  // per-image channel standardization of the dense prompt input
  DensePromptConfig dense;

  static constexpr int kAnchorRows = 4;  // support fg/bg, enhanced query fg/bg
};

struct CdtapOutput {
  Var transformed_global;  // W applied to the query global feature
  Var dense;               // C_p x H_m x W_m
  Var prompt_tokens;       // 4 x D
  PrototypePair support;
  PrototypePair query;
  AnchorTransform transform;
  bool fg_fallback = false;
  bool bg_fallback = false;
};

class Cdtap {
 public:
  Cdtap() = default;
  Cdtap(const CdtapConfig& config, std::uint64_t seed) : config_(config) {
    config_.dense.out_channels = config_.mask_channels;
    config_.dense.prior_channels = CdtapConfig::kAnchorRows;
    Rng rng(seed);
    anchor_ = Parameter("cdtap.anchor",
                        trunc_normal({CdtapConfig::kAnchorRows, config_.feature_channels},
                                     1.0 / std::sqrt(static_cast<double>(config_.feature_channels)), rng));
    prompt_proj_ = Linear("cdtap.prompt_proj", config_.feature_channels, config_.token_dim, rng);
    dense_ = DensePromptNet(config_.dense, mix_seed(seed, 1));
  }

  const CdtapConfig& config() const { return config_; }
  DensePromptNet& dense_net() { return dense_; }
  Parameter& anchor() { return anchor_; }

  // Prototype stage: support prototypes, cycle matching, normalization.
  struct Prototypes {
    PrototypePair support;
    PrototypePair query;
    bool fg_fallback = false;
    bool bg_fallback = false;
  };

  static Prototypes compute_prototypes(const std::vector<Tensor>& support_feats,
                                       const std::vector<Mask>& support_masks, const Tensor& query_feat) {
    std::vector<Prototype> fg, bg;
    for (std::size_t k = 0; k < support_feats.size(); ++k) {
      fg.push_back(masked_prototype(support_feats[k], support_masks[k], Region::kForeground));
      bg.push_back(masked_prototype(support_feats[k], support_masks[k], Region::kBackground));
    }
    const CycleMatchResult cm = cycle_match(support_feats, support_masks, query_feat);
    Prototypes p;
    p.support = normalize_pair(average_prototypes(fg), average_prototypes(bg));
    p.query = normalize_pair(cm.fg.query_prototype, cm.bg.query_prototype);
    p.fg_fallback = cm.fg.fallback;
    p.bg_fallback = cm.bg.fallback;
    return p;
  }

  static Tensor stack(const Prototypes& p) {
    const int c = static_cast<int>(p.support.fg.vector.size());
    Tensor P({CdtapConfig::kAnchorRows, c});
    const Prototype* rows[] = {&p.support.fg, &p.support.bg, &p.query.fg, &p.query.bg};
    for (int r = 0; r < CdtapConfig::kAnchorRows; ++r) std::copy_n(rows[r]->vector.data(), c, P.data() + r * c);
    return P;
  }

  // Generates Z from the image and prior maps; prior may be null (zeros).
  Var dense_prompt(Graph& g, const Image& image, const Tensor* prior, int out_size) {
    Tensor input = dense_prompt_input(image, prior, config_.dense.prior_channels);
    if (config_.standardize_inputs) input = standardize_channels(input);
    return dense_.forward(g, g.constant(input), out_size);
  }

  DenseEmbedding dense_prompt(const Image& image, int out_size, const Tensor* prior = nullptr) {
    Graph g;
    return DenseEmbedding{dense_prompt(g, image, prior, out_size).value()};
  }

  CdtapOutput forward(Graph& g, const std::vector<Tensor>& support_globals, const std::vector<Mask>& support_masks,
                      const Tensor& query_global, const Var& query_global_var, const Image& query_image,
                      int out_size) {
    CdtapOutput out;
    const Prototypes protos = compute_prototypes(support_globals, support_masks, query_global);
    out.support = protos.support;
    out.query = protos.query;
    out.fg_fallback = protos.fg_fallback;
    out.bg_fallback = protos.bg_fallback;
    const Tensor P = stack(protos);
    out.transform = solve_transform(P, anchor_.value, config_.rcond, /*warn=*/false);
    // W = A^T (P^T)^+ recorded on the tape so the anchor receives gradients.
    const Var W = ops::matmul(ops::transpose(g.parameter(anchor_)), g.constant(out.transform.pinv));
    out.transformed_global = apply_transform(W, query_global_var);
    const Tensor prior = similarity_prior(query_global, {&protos.support.fg, &protos.support.bg, &protos.query.fg,
                                                         &protos.query.bg});
    out.dense = dense_prompt(g, query_image, &prior, out_size);
    out.prompt_tokens = prompt_proj_(g, g.constant(P));
    return out;
  }

  ParameterList parameters() {
    ParameterList out{&anchor_};
    prompt_proj_.collect(out);
    for (Parameter* p : dense_.parameters()) out.push_back(p);
    return out;
  }

 private:
  CdtapConfig config_;
  Parameter anchor_;
  Linear prompt_proj_;
  DensePromptNet dense_;
};

}  // namespace tavp

#endif  // TAVP_CDTAP_HPP_
