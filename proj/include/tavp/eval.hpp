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
#ifndef TAVP_EVAL_HPP_
#define TAVP_EVAL_HPP_

// Episode evaluation, report tables and qualitative overlays.

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "tavp/datasets.hpp"
#include "tavp/model.hpp"

namespace tavp {

// Mean of foreground and background IoU; a class absent from both masks
// scores 1.
inline double miou(const Mask& pred, const Mask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("miou: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " vs ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  std::size_t inter[2] = {0, 0}, uni[2] = {0, 0};
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const int p = pred.data[i] ? 1 : 0, t = gt.data[i] ? 1 : 0;
    for (int c = 0; c < 2; ++c) {
      const bool pc = p == c, tc = t == c;
      inter[c] += (pc && tc) ? 1 : 0;
      uni[c] += (pc || tc) ? 1 : 0;
    }
  }
  double total = 0.0;
  for (int c = 0; c < 2; ++c) total += uni[c] == 0 ? 1.0 : static_cast<double>(inter[c]) / uni[c];
  return total / 2.0;
}

inline Mask threshold_logits(const Tensor& logits) {
  require_rank(logits, 2, "logits");
  Mask m(logits.dim(0), logits.dim(1));
  for (std::size_t i = 0; i < logits.size(); ++i) m.data[i] = logits[i] > 0.0 ? 1 : 0;
  return m;
}

// Predicts a binary query mask for an episode.
using Predictor = std::function<Mask(const Episode&)>;

// Query logits with encoder outputs taken from `cache`.
inline Tensor predict_logits(TavpModel& model, FeatureCache& cache, const Episode& ep) {
  std::vector<std::shared_ptr<const FeaturePyramid>> held;
  std::vector<const FeaturePyramid*> ptrs;
  std::vector<Mask> masks;
  for (const Sample& s : ep.support) {
    held.push_back(cache.get(model, s));
    ptrs.push_back(held.back().get());
    masks.push_back(s.mask);
  }
  const auto q = cache.get(model, ep.query);
  Graph g;
  return model.forward(g, ptrs, masks, *q, ep.query.image).logits.value();
}

inline Predictor model_predictor(TavpModel& model) {
  auto cache = std::make_shared<FeatureCache>();
  return [&model, cache](const Episode& ep) {
    Mask m = threshold_logits(predict_logits(model, *cache, ep));
    if (m.height != ep.query.mask.height || m.width != ep.query.mask.width) {
      m = resize_nearest(m, ep.query.mask.height, ep.query.mask.width);
    }
    return m;
  };
}

inline Predictor oracle_predictor() {
  return [](const Episode& ep) { return ep.query.mask; };
}

inline Predictor background_predictor() {
  return [](const Episode& ep) { return Mask(ep.query.mask.height, ep.query.mask.width); };
}

inline std::uint64_t domain_seed(std::uint64_t seed, const std::string& domain_id) {
  return mix_seed(seed, detail::fnv1a(domain_id));
}

// The fixed episode list used for a domain.
inline std::vector<Episode> evaluation_episodes(const Dataset& ds, int shot, int n_episodes, std::uint64_t seed) {
  if (n_episodes < 1) throw ConfigError("n_episodes must be >= 1");
  const std::uint64_t base = domain_seed(seed, ds.domain_id);
  std::vector<Episode> out;
  out.reserve(n_episodes);
  for (int i = 0; i < n_episodes; ++i) out.push_back(sample_episode(ds, shot, mix_seed(base, static_cast<std::uint64_t>(i))));
  return out;
}

struct DomainResult {
  std::string domain;
  int shot = 0;
  double miou = 0.0;
  int episodes = 0;
  std::vector<double> per_episode;
};

struct EvalReport {
  std::uint64_t seed = 0;
  std::string model_id;
  std::vector<DomainResult> rows;

  std::vector<int> shots() const {
    std::vector<int> s;
    for (const DomainResult& r : rows)
      if (std::find(s.begin(), s.end(), r.shot) == s.end()) s.push_back(r.shot);
    return s;
  }

  std::vector<std::string> domains() const {
    std::vector<std::string> d;
    for (const DomainResult& r : rows)
      if (std::find(d.begin(), d.end(), r.domain) == d.end()) d.push_back(r.domain);
    return d;
  }

  const DomainResult* find(const std::string& domain, int shot) const {
    for (const DomainResult& r : rows)
      if (r.domain == domain && r.shot == shot) return &r;
    return nullptr;
  }

  // Arithmetic mean over the domains evaluated at `shot`.
  double average(int shot) const {
    double total = 0.0;
    int n = 0;
    for (const DomainResult& r : rows) {
      if (r.shot != shot) continue;
      total += r.miou;
      ++n;
    }
    return n == 0 ? 0.0 : total / n;
  }
};

inline DomainResult evaluate(const Predictor& predict, const Dataset& ds, int shot, int n_episodes,
                             std::uint64_t seed) {
  DomainResult r;
  r.domain = ds.domain_id;
  r.shot = shot;
  r.episodes = n_episodes;
  double total = 0.0;
  for (const Episode& ep : evaluation_episodes(ds, shot, n_episodes, seed)) {
    const double v = miou(predict(ep), ep.query.mask);
    r.per_episode.push_back(v);
    total += v;
  }
  r.miou = total / n_episodes;
  return r;
}

inline EvalReport evaluate(const Predictor& predict, const std::vector<Dataset>& datasets,
                           const std::vector<int>& shots, int n_episodes, std::uint64_t seed,
                           const std::string& model_id = "") {
  EvalReport report;
  report.seed = seed;
  report.model_id = model_id;
  for (int shot : shots)
    for (const Dataset& ds : datasets) report.rows.push_back(evaluate(predict, ds, shot, n_episodes, seed));
  return report;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string report_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "domain,shot,miou,episodes\n";
  for (const DomainResult& row : r.rows) {
    out << row.domain << "," << row.shot << "," << format_double(row.miou) << "," << row.episodes << "\n";
  }
  return out.str();
}

// One line per shot setting, one column per domain plus the average, values
// in percent.
inline std::string report_table(const EvalReport& r) {
  const std::vector<std::string> domains = r.domains();
  std::ostringstream out;
  out << std::left << std::setw(10) << "shot";
  for (const std::string& d : domains) out << std::right << std::setw(16) << d;
  out << std::right << std::setw(10) << "Average" << "\n";
  for (int shot : r.shots()) {
    out << std::left << std::setw(10) << (std::to_string(shot) + "-shot");
    for (const std::string& d : domains) {
      const DomainResult* row = r.find(d, shot);
      std::ostringstream cell;
      if (row) cell << std::fixed << std::setprecision(2) << 100.0 * row->miou;
      else cell << "-";
      out << std::right << std::setw(16) << cell.str();
    }
    std::ostringstream avg;
    avg << std::fixed << std::setprecision(2) << 100.0 * r.average(shot);
    out << std::right << std::setw(10) << avg.str() << "\n";
  }
  return out.str();
}

inline void write_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : {std::pair<std::string, std::string>{"report.csv", report_csv(r)},
                                   std::pair<std::string, std::string>{"report.txt", report_table(r)}}) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw IoError("cannot write " + (dir / name).string());
    f << text;
  }
}

// ---------------------------------------------------------------------------
// Overlays

inline constexpr double kOverlayAlpha = 0.5;

inline void blend(Image& img, int y, int x, const std::array<double, 3>& color, double alpha) {
  for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>((1.0 - alpha) * img.at(y, x, c) + alpha * color[c]);
}

inline Image to_rgb(const Image& in) {
  if (in.channels == 3) return in;
  Image out(in.height, in.width, 3);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = in.at(y, x, 0);
  return out;
}

// Support panels with the support mask in red, then the query panel with the
// ground truth in green and the prediction in blue, side by side.
inline Image compose_overlay(const Episode& ep, const Mask& prediction) {
  const int h = ep.query.image.height, w = ep.query.image.width;
  const int panels = static_cast<int>(ep.support.size()) + 1;
  Image canvas(h, w * panels, 3);
  auto place = [&](const Image& panel, int index) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) canvas.at(y, index * w + x, c) = panel.at(y, x, c);
  };
  for (std::size_t k = 0; k < ep.support.size(); ++k) {
    const Sample& s = ep.support[k];
    if (s.image.height != h || s.image.width != w) throw ShapeError("overlay panels must share a size");
    Image panel = to_rgb(s.image);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (s.mask.at(y, x)) blend(panel, y, x, {1, 0, 0}, kOverlayAlpha);
    place(panel, static_cast<int>(k));
  }
  if (prediction.height != h || prediction.width != w) throw ShapeError("prediction size differs from query");
  Image panel = to_rgb(ep.query.image);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (ep.query.mask.at(y, x)) blend(panel, y, x, {0, 1, 0}, kOverlayAlpha);
      if (prediction.at(y, x)) blend(panel, y, x, {0, 0, 1}, kOverlayAlpha);
    }
  place(panel, panels - 1);
  return canvas;
}

inline void render_overlay(const Episode& ep, const Mask& prediction, const std::filesystem::path& path) {
  write_png(path, compose_overlay(ep, prediction));
}

}  // namespace tavp

#endif  // TAVP_EVAL_HPP_
