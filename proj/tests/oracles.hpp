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
#ifndef TAVP_TESTS_ORACLES_HPP_
#define TAVP_TESTS_ORACLES_HPP_

// Brute-force reference implementations shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <vector>

#include "tavp/cdtap.hpp"

namespace tavp::testing {

inline Mask random_mask(int h, int w, Rng& rng, double p = 0.4) {
  Mask m(h, w);
  for (auto& v : m.data) v = uniform01(rng) < p ? 1 : 0;
  if (m.count() == 0) m.data[0] = 1;
  if (m.count() == m.data.size()) m.data[1] = 0;
  return m;
}

// Half-pixel-center bilinear sample of a binary mask at grid cell (y, x) of an
// h x w target, written out per tap.
inline double oracle_weight(const Mask& m, int h, int w, int y, int x) {
  auto coord = [](int i, int src, int dst) {
    double c = (i + 0.5) * src / static_cast<double>(dst) - 0.5;
    if (c < 0) c = 0;
    if (c > src - 1) c = src - 1;
    return c;
  };
  const double cy = coord(y, m.height, h), cx = coord(x, m.width, w);
  double total = 0.0;
  for (int yy = 0; yy < m.height; ++yy)
    for (int xx = 0; xx < m.width; ++xx) {
      const double ty = std::max(0.0, 1.0 - std::abs(cy - yy));
      const double tx = std::max(0.0, 1.0 - std::abs(cx - xx));
      total += ty * tx * m.at(yy, xx);
    }
  return total;
}

inline std::vector<double> oracle_prototype(const Tensor& f, const Mask& m, bool fg) {
  const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
  std::vector<double> num(c, 0.0);
  double den = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double wt = oracle_weight(m, h, w, y, x);
      if (!fg) wt = 1.0 - wt;
      den += wt;
      for (int k = 0; k < c; ++k) num[k] += f.at(k, y, x) * wt;
    }
  for (double& v : num) v /= den;
  return num;
}

// Exhaustive matching over all position pairs with per-pair cosine.
struct OracleMatch {
  std::vector<MatchIndex> fg, bg;
  std::vector<double> fg_proto, bg_proto;
  bool fg_fallback = false, bg_fallback = false;
};

inline double cosine(const Tensor& a, int pa, const Tensor& b, int pb) {
  const int c = a.dim(0), n = a.dim(1) * a.dim(2);
  double dot = 0, na = 0, nb = 0;
  for (int k = 0; k < c; ++k) {
    dot += a[k * n + pa] * b[k * n + pb];
    na += a[k * n + pa] * a[k * n + pa];
    nb += b[k * n + pb] * b[k * n + pb];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline OracleMatch oracle_cycle(const std::vector<Tensor>& sf, const std::vector<Mask>& sm, const Tensor& q) {
  const int c = q.dim(0), h = q.dim(1), w = q.dim(2), n = h * w;
  OracleMatch out;
  for (bool fg : {true, false}) {
    auto& list = fg ? out.fg : out.bg;
    std::vector<double> acc(c, 0.0);
    double wsum = 0.0;
    std::vector<double> fallback(c, 0.0);
    for (std::size_t k = 0; k < sf.size(); ++k) {
      const auto sp = oracle_prototype(sf[k], sm[k], fg);
      for (int ch = 0; ch < c; ++ch) fallback[ch] += sp[ch] / sf.size();
      auto weight = [&](int pos) {
        const double wt = oracle_weight(sm[k], h, w, pos / w, pos % w);
        return fg ? wt : 1.0 - wt;
      };
      for (int p = 0; p < n; ++p) {
        if (!(weight(p) > 0.0)) continue;
        int best_q = 0;
        double best = -2;
        for (int qq = 0; qq < n; ++qq) {
          const double s = cosine(sf[k], p, q, qq);
          if (s > best) best = s, best_q = qq;
        }
        int best_s = 0;
        best = -2;
        for (int ss = 0; ss < n; ++ss) {
          const double s = cosine(q, best_q, sf[k], ss);
          if (s > best) best = s, best_s = ss;
        }
        MatchIndex mi;
        mi.shot = static_cast<int>(k);
        mi.support_pos = {p / w, p % w};
        mi.i_s2q = {best_q / w, best_q % w};
        mi.j_q2s = {best_s / w, best_s % w};
        mi.cycle_consistent = weight(best_s) > 0.0;
        if (mi.cycle_consistent) {
          for (int ch = 0; ch < c; ++ch) acc[ch] += weight(p) * q[ch * n + best_q];
          wsum += weight(p);
        }
        list.push_back(mi);
      }
    }
    auto& proto = fg ? out.fg_proto : out.bg_proto;
    if (wsum <= 0.0) {
      proto = fallback;
      (fg ? out.fg_fallback : out.bg_fallback) = true;
    } else {
      proto = acc;
      for (double& v : proto) v /= wsum;
    }
  }
  return out;
}

// Gaussian elimination with partial pivoting: solves M X = B.
inline std::vector<std::vector<double>> gauss_solve(std::vector<std::vector<double>> M, std::vector<std::vector<double>> B) {
  const int n = static_cast<int>(M.size()), m = static_cast<int>(B[0].size());
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(M[r][col]) > std::abs(M[piv][col])) piv = r;
    std::swap(M[col], M[piv]);
    std::swap(B[col], B[piv]);
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = M[r][col] / M[col][col];
      for (int k = 0; k < n; ++k) M[r][k] -= f * M[col][k];
      for (int k = 0; k < m; ++k) B[r][k] -= f * B[col][k];
    }
  }
  for (int r = 0; r < n; ++r)
    for (int k = 0; k < m; ++k) B[r][k] /= M[r][r];
  return B;
}

inline double residual(const Tensor& W, const Tensor& P, const Tensor& A) {
  const int r = P.dim(0), c = P.dim(1);
  double total = 0.0;
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < r; ++j) {
      double v = 0.0;
      for (int k = 0; k < c; ++k) v += W.at(i, k) * P.at(j, k);
      v -= A.at(j, i);
      total += v * v;
    }
  return std::sqrt(total);
}

}  // namespace tavp::testing

#endif  // TAVP_TESTS_ORACLES_HPP_
