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
#ifndef TAVP_NN_HPP_
#define TAVP_NN_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tavp/ops.hpp"

namespace tavp {

using Rng = std::mt19937_64;

using ParameterList = std::vector<Parameter*>;

// SplitMix64 finalizer; used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Deterministic across standard libraries, unlike std::uniform_real_distribution.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
  const auto span = static_cast<std::uint64_t>(hi_inclusive - lo + 1);
  return lo + static_cast<int>(rng() % span);
}

inline double normal(Rng& rng) {
  // Box-Muller on our own uniforms so draws are reproducible everywhere.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline Tensor random_normal(Shape shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = std * normal(rng);
  return t;
}

// Normal truncated at two standard deviations (rejection sampling).
inline Tensor trunc_normal(Shape shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = std * z;
  }
  return t;
}

struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng, double std = -1.0) {
    if (std < 0) std = 1.0 / std::sqrt(static_cast<double>(in));
    weight = Parameter(name + ".weight", trunc_normal({out, in}, std, rng));
    bias = Parameter(name + ".bias", Tensor({out}));
  }

  int in_features() const { return weight.value.dim(1); }
  int out_features() const { return weight.value.dim(0); }

  Var operator()(Graph& g, const Var& x) {
    return ops::linear(x, g.parameter(weight), g.parameter(bias));
  }

  void collect(ParameterList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

struct LayerNorm {
  Parameter gamma;
  Parameter beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim)
      : gamma(name + ".gamma", Tensor({dim}, 1.0)), beta(name + ".beta", Tensor({dim})) {}

  Var operator()(Graph& g, const Var& x) {
    return ops::layer_norm(x, g.parameter(gamma), g.parameter(beta));
  }

  void collect(ParameterList& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

struct Conv2d {
  Parameter weight;
  Parameter bias;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int k, int stride_, int pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    const double std = std::sqrt(2.0 / (in * k * k));
    weight = Parameter(name + ".weight", trunc_normal({out, in, k, k}, std, rng));
    bias = Parameter(name + ".bias", Tensor({out}));
  }

  int in_channels() const { return weight.value.dim(1); }
  int out_channels() const { return weight.value.dim(0); }

  Var operator()(Graph& g, const Var& x) {
    return ops::conv2d(x, g.parameter(weight), g.parameter(bias), stride, pad);
  }

  void collect(ParameterList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

// Bilinear upsampling kernel of size k (FCN-style), weights sum to stride^2
// over a stride-k tiling.
inline std::vector<double> bilinear_kernel_1d(int k) {
  const int f = (k + 1) / 2;
  const double center = (k % 2 == 1) ? f - 1 : f - 0.5;
  std::vector<double> w(k);
  for (int i = 0; i < k; ++i) w[i] = 1.0 - std::abs((i - center) / f);
  return w;
}

struct ConvTranspose2d {
  Parameter weight;  // C_in x C_out x k x k
  Parameter bias;
  int stride = 1;

  ConvTranspose2d() = default;
  // Weights are a bilinear spatial profile times a random channel mixing.
  ConvTranspose2d(const std::string& name, int in, int out, int k, int stride_, Rng& rng)
      : stride(stride_) {
    const auto profile = bilinear_kernel_1d(k);
    Tensor mixing = trunc_normal({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    Tensor w({in, out, k, k});
    for (int i = 0; i < in; ++i)
      for (int o = 0; o < out; ++o)
        for (int a = 0; a < k; ++a)
          for (int b = 0; b < k; ++b)
            w[((static_cast<std::size_t>(i) * out + o) * k + a) * k + b] =
                mixing.at(i, o) * profile[a] * profile[b];
    weight = Parameter(name + ".weight", std::move(w));
    bias = Parameter(name + ".bias", Tensor({out}));
  }

  int in_channels() const { return weight.value.dim(0); }
  int out_channels() const { return weight.value.dim(1); }

  Var operator()(Graph& g, const Var& x) {
    return ops::conv_transpose2d(x, g.parameter(weight), g.parameter(bias), stride);
  }

  void collect(ParameterList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

// Multi-head scaled dot-product attention with separate q/k/v/out
// projections. internal_dim may be smaller than the embedding width.
struct Attention {
  Linear q_proj, k_proj, v_proj, out_proj;
  int heads = 1;

  Attention() = default;
  Attention(const std::string& name, int dim, int internal_dim, int heads_, Rng& rng,
            double std = 0.02)
      : heads(heads_) {
    if (internal_dim % heads_ != 0) throw ShapeError("attention width not divisible by heads");
    q_proj = Linear(name + ".q", dim, internal_dim, rng, std);
    k_proj = Linear(name + ".k", dim, internal_dim, rng, std);
    v_proj = Linear(name + ".v", dim, internal_dim, rng, std);
    out_proj = Linear(name + ".out", internal_dim, dim, rng, std);
  }

  // key_mask, if non-empty, has one entry per key row; false rows are ignored.
  Var operator()(Graph& g, const Var& q_in, const Var& k_in, const Var& v_in,
                 const std::vector<bool>& key_mask = {}) {
    const Var q = q_proj(g, q_in);
    const Var k = k_proj(g, k_in);
    const Var v = v_proj(g, v_in);
    const int nq = q.dim(0), nk = k.dim(0), width = q.dim(1);
    const int head_dim = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    Tensor mask;
    if (!key_mask.empty()) {
      if (static_cast<int>(key_mask.size()) != nk) throw ShapeError("attention key mask length");
      mask = Tensor({nq, nk});
      for (int i = 0; i < nq; ++i)
        for (int j = 0; j < nk; ++j)
          if (!key_mask[j]) mask.at(i, j) = -1e9;
    }
    std::vector<Var> outs;
    for (int h = 0; h < heads; ++h) {
      const Var qh = ops::slice_cols(q, h * head_dim, head_dim);
      const Var kh = ops::slice_cols(k, h * head_dim, head_dim);
      const Var vh = ops::slice_cols(v, h * head_dim, head_dim);
      Var scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), scale);
      if (!mask.empty()) scores = ops::add_constant(scores, mask);
      outs.push_back(ops::matmul(ops::softmax_rows(scores), vh));
    }
    return out_proj(g, heads == 1 ? outs[0] : ops::concat_cols(outs));
  }

  void collect(ParameterList& out) {
    q_proj.collect(out);
    k_proj.collect(out);
    v_proj.collect(out);
    out_proj.collect(out);
  }
};

inline void set_trainable(const ParameterList& params, bool trainable) {
  for (Parameter* p : params) p->trainable = trainable;
}

inline std::size_t count_values(const ParameterList& params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += p->value.size();
  return n;
}

}  // namespace tavp

#endif  // TAVP_NN_HPP_
