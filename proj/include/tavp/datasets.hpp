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
#ifndef TAVP_DATASETS_HPP_
#define TAVP_DATASETS_HPP_

// Synthetic cross-domain segmentation data, benchmark preprocessing,
// augmentation and 1-way K-shot episode sampling.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tavp/error.hpp"
#include "tavp/image.hpp"
#include "tavp/nn.hpp"

namespace tavp {

enum class ShapeFamily { kEllipse, kRectangle, kPolygon, kBlob };
enum class Texture { kFlat, kNoise, kStripes };
enum class Palette { kRgb, kGrayscale };

inline const char* to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kEllipse: return "ellipse";
    case ShapeFamily::kRectangle: return "rectangle";
    case ShapeFamily::kPolygon: return "polygon";
    case ShapeFamily::kBlob: return "blob";
  }
  return "?";
}
inline const char* to_string(Texture t) {
  switch (t) {
    case Texture::kFlat: return "flat";
    case Texture::kNoise: return "noise";
    case Texture::kStripes: return "stripes";
  }
  return "?";
}
inline const char* to_string(Palette p) { return p == Palette::kRgb ? "rgb" : "grayscale"; }

inline ShapeFamily parse_shape_family(const std::string& s) {
  if (s == "ellipse") return ShapeFamily::kEllipse;
  if (s == "rectangle") return ShapeFamily::kRectangle;
  if (s == "polygon") return ShapeFamily::kPolygon;
  if (s == "blob") return ShapeFamily::kBlob;
  throw ConfigError("unknown shape_family '" + s + "'");
}
inline Texture parse_texture(const std::string& s) {
  if (s == "flat") return Texture::kFlat;
  if (s == "noise") return Texture::kNoise;
  if (s == "stripes") return Texture::kStripes;
  throw ConfigError("unknown texture '" + s + "'");
}
inline Palette parse_palette(const std::string& s) {
  if (s == "rgb") return Palette::kRgb;
  if (s == "grayscale") return Palette::kGrayscale;
  throw ConfigError("unknown palette '" + s + "'");
}

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct DomainSpec {
  std::string domain_id = "domain";
  int canvas_size = 64;
  ShapeFamily shape_family = ShapeFamily::kEllipse;
  Texture texture = Texture::kFlat;
  Palette palette = Palette::kRgb;
  Range fg_scale_range{0.05, 0.3};  // target area as a fraction of the canvas
  double noise_std = 0.02;
  int distractors = 1;  // objects of other classes drawn outside the mask

  void validate() const {
    if (domain_id.empty()) throw ConfigError("domain_id must not be empty");
    if (canvas_size < 16) throw ConfigError("canvas_size must be >= 16");
    if (!(fg_scale_range.lo > 0.0 && fg_scale_range.lo < fg_scale_range.hi &&
          fg_scale_range.hi <= 1.0)) {
      throw ConfigError("fg_scale_range must satisfy 0 < min < max <= 1");
    }
    if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
    if (distractors < 0) throw ConfigError("distractors must be >= 0");
  }
  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

// Geometry of the rendered target object, kept so tests can re-rasterize it.
struct ShapeRecord {
  ShapeFamily family = ShapeFamily::kEllipse;
  double cx = 0, cy = 0;   // pixel units, pixel centers at (x + 0.5, y + 0.5)
  double a = 0, b = 0;     // semi-axes / half-extents / blob base radius
  double angle = 0;        // radians
  std::vector<std::array<double, 2>> vertices;  // polygon
  std::array<double, 4> harmonics{};            // blob: amp3, phase3, amp5, phase5
  friend bool operator==(const ShapeRecord&, const ShapeRecord&) = default;
};

struct Sample {
  Image image;
  Mask mask;
  int class_id = 0;
  std::string domain_id;
  int index = -1;  // position in the owning dataset; -1 for derived samples
  std::optional<ShapeRecord> shape;

  void validate() const {
    if (!mask.is_binary()) throw ShapeError("sample mask is not binary");
    if (image.height != mask.height || image.width != mask.width) {
      throw ShapeError("sample image and mask sizes differ");
    }
  }
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::string domain_id;
  std::vector<Sample> samples;

  std::vector<int> classes() const {
    std::set<int> ids;
    for (const Sample& s : samples) ids.insert(s.class_id);
    return {ids.begin(), ids.end()};
  }
  std::vector<int> indices_of(int class_id) const {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
      if (samples[i].class_id == class_id) idx.push_back(i);
    }
    return idx;
  }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// One 1-way K-shot task.
struct Episode {
  std::vector<Sample> support;
  Sample query;
  int way = 1;
  int shot = 0;
  int class_id = 0;

  Episode() = default;
  Episode(std::vector<Sample> support_, Sample query_)
      : support(std::move(support_)), query(std::move(query_)) {
    if (support.empty()) throw SamplingError("episode needs at least one support sample");
    shot = static_cast<int>(support.size());
    class_id = query.class_id;
    for (const Sample& s : support) {
      if (s.class_id != class_id) throw SamplingError("support and query classes differ");
    }
  }
};

struct AugmentPolicy {
  Range brightness{0.0, 0.0};   // additive delta
  Range contrast{1.0, 1.0};     // multiplicative factor about the mean
  Range saturation{1.0, 1.0};   // multiplicative factor about the luminance
  double hflip_prob = 0.0;
  double vflip_prob = 0.0;
  double rotation_deg = 0.0;    // uniform in [-r, r]
  double translate_frac = 0.0;  // uniform in [-t, t] of the canvas size
  Range scale{1.0, 1.0};
  int max_affine_retries = 10;

  static AugmentPolicy identity() { return {}; }
  static AugmentPolicy standard() {
    AugmentPolicy p;
    p.brightness = {-0.1, 0.1};
    p.contrast = {0.9, 1.1};
    p.saturation = {0.9, 1.1};
    p.hflip_prob = 0.5;
    p.vflip_prob = 0.5;
    p.rotation_deg = 10.0;
    p.translate_frac = 0.05;
    p.scale = {0.9, 1.1};
    return p;
  }

  void validate() const {
    auto prob = [](double p, const char* n) {
      if (p < 0.0 || p > 1.0) throw ConfigError(std::string(n) + " must be in [0, 1]");
    };
    auto range = [](const Range& r, const char* n) {
      if (r.hi < r.lo) throw ConfigError(std::string(n) + " range has max < min");
    };
    prob(hflip_prob, "hflip_prob");
    prob(vflip_prob, "vflip_prob");
    range(brightness, "brightness");
    range(contrast, "contrast");
    range(saturation, "saturation");
    range(scale, "scale");
    if (contrast.lo < 0 || saturation.lo < 0 || scale.lo <= 0) {
      throw ConfigError("contrast/saturation must be >= 0 and scale > 0");
    }
    if (rotation_deg < 0 || translate_frac < 0) {
      throw ConfigError("rotation_deg and translate_frac must be >= 0");
    }
    if (max_affine_retries < 0) throw ConfigError("max_affine_retries must be >= 0");
  }
  friend bool operator==(const AugmentPolicy&, const AugmentPolicy&) = default;
};

// ---------------------------------------------------------------------------
// Shape rasterization

namespace shapes {

inline bool inside(const ShapeRecord& s, double px, double py) {
  const double dx = px - s.cx, dy = py - s.cy;
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  const double u = dx * c + dy * sn;
  const double v = -dx * sn + dy * c;
  switch (s.family) {
    case ShapeFamily::kEllipse:
      return (u * u) / (s.a * s.a) + (v * v) / (s.b * s.b) <= 1.0;
    case ShapeFamily::kRectangle:
      return std::abs(u) <= s.a && std::abs(v) <= s.b;
    case ShapeFamily::kPolygon: {
      bool in = false;
      const auto& vs = s.vertices;
      for (std::size_t i = 0, j = vs.size() - 1; i < vs.size(); j = i++) {
        const double xi = vs[i][0], yi = vs[i][1], xj = vs[j][0], yj = vs[j][1];
        if (((yi > py) != (yj > py)) && (px < (xj - xi) * (py - yi) / (yj - yi) + xi)) in = !in;
      }
      return in;
    }
    case ShapeFamily::kBlob: {
      const double theta = std::atan2(dy, dx);
      const auto& h = s.harmonics;
      const double r = s.a * (1.0 + h[0] * std::sin(3 * theta + h[1]) + h[2] * std::sin(5 * theta + h[3]));
      return dx * dx + dy * dy <= r * r;
    }
  }
  return false;
}

inline Mask rasterize(const ShapeRecord& s, int size) {
  Mask m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) m.at(y, x) = inside(s, x + 0.5, y + 0.5) ? 1 : 0;
  return m;
}

// Radius of a disc around the center that contains the whole shape.
inline double extent(const ShapeRecord& s) {
  switch (s.family) {
    case ShapeFamily::kEllipse: return std::max(s.a, s.b);
    case ShapeFamily::kRectangle: return std::hypot(s.a, s.b);
    case ShapeFamily::kPolygon: {
      double r = 0;
      for (const auto& v : s.vertices) r = std::max(r, std::hypot(v[0] - s.cx, v[1] - s.cy));
      return r;
    }
    case ShapeFamily::kBlob:
      return s.a * (1.0 + std::abs(s.harmonics[0]) + std::abs(s.harmonics[2]));
  }
  return 0;
}

// Draws a shape of the given family whose analytic area is `area` pixels,
// centered at (cx, cy).
inline ShapeRecord make_shape(ShapeFamily family, double area, double cx, double cy, Rng& rng) {
  ShapeRecord s;
  s.family = family;
  s.cx = cx;
  s.cy = cy;
  s.angle = uniform(rng, 0.0, std::numbers::pi);
  switch (family) {
    case ShapeFamily::kEllipse: {
      const double aspect = uniform(rng, 0.55, 1.0);
      s.a = std::sqrt(area / (std::numbers::pi * aspect));
      s.b = s.a * aspect;
      break;
    }
    case ShapeFamily::kRectangle: {
      const double aspect = uniform(rng, 0.5, 1.0);
      s.a = 0.5 * std::sqrt(area / aspect);
      s.b = s.a * aspect;
      break;
    }
    case ShapeFamily::kPolygon: {
      const int n = uniform_int(rng, 3, 6);
      std::vector<double> radii(n), angles(n);
      for (int i = 0; i < n; ++i) {
        radii[i] = uniform(rng, 0.75, 1.0);
        angles[i] = s.angle + 2.0 * std::numbers::pi * (i + uniform(rng, -0.2, 0.2)) / n;
      }
      // Shoelace area of the unit-scale polygon, then rescale to `area`.
      double unit = 0;
      for (int i = 0; i < n; ++i) {
        const int j = (i + 1) % n;
        unit += radii[i] * radii[j] * std::sin(angles[j] - angles[i]);
      }
      unit = 0.5 * std::abs(unit);
      const double r = std::sqrt(area / unit);
      s.a = r;
      for (int i = 0; i < n; ++i) {
        s.vertices.push_back({cx + r * radii[i] * std::cos(angles[i]), cy + r * radii[i] * std::sin(angles[i])});
      }
      break;
    }
    case ShapeFamily::kBlob: {
      s.harmonics = {uniform(rng, 0.1, 0.25), uniform(rng, 0.0, 6.28), uniform(rng, 0.05, 0.12),
                     uniform(rng, 0.0, 6.28)};
      const double k = 1.0 + 0.5 * (s.harmonics[0] * s.harmonics[0] + s.harmonics[2] * s.harmonics[2]);
      s.a = std::sqrt(area / (std::numbers::pi * k));
      break;
    }
  }
  return s;
}

inline ShapeRecord translated(ShapeRecord s, double cx, double cy) {
  const double dx = cx - s.cx, dy = cy - s.cy;
  s.cx = cx;
  s.cy = cy;
  for (auto& v : s.vertices) {
    v[0] += dx;
    v[1] += dy;
  }
  return s;
}

}  // namespace shapes

// ---------------------------------------------------------------------------
// Synthetic generation

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct ClassSignature {
  ShapeFamily family;
  Range area;  // fraction of canvas
  std::array<double, 3> color;
};

inline ClassSignature class_signature(const DomainSpec& spec, int class_id) {
  ClassSignature sig;
  const int base = static_cast<int>(spec.shape_family);
  sig.family = static_cast<ShapeFamily>((base + class_id) % 4);
  const double lo = spec.fg_scale_range.lo, hi = spec.fg_scale_range.hi;
  const double half = 0.5 * (hi - lo);
  const int band = (class_id / 4) % 2;
  sig.area = {lo + band * half, lo + (band + 1) * half};
  const double hue = 0.13 * static_cast<double>(detail::fnv1a(spec.domain_id) % 8) +
                     0.61803398875 * class_id;
  sig.color = hsv_to_rgb(hue, 0.75, 0.9);
  return sig;
}

// Smooth value noise in [-1, 1] from a coarse random lattice.
inline std::vector<double> value_noise(int size, int cells, Rng& rng) {
  std::vector<double> lattice((cells + 1) * (cells + 1));
  for (double& v : lattice) v = uniform(rng, -1.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    const double fy = (y + 0.5) * cells / size;
    const int y0 = std::min(static_cast<int>(fy), cells - 1);
    const double ty = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = (x + 0.5) * cells / size;
      const int x0 = std::min(static_cast<int>(fx), cells - 1);
      const double tx = fx - x0;
      auto L = [&](int i, int j) { return lattice[i * (cells + 1) + j]; };
      out[y * size + x] = (L(y0, x0) * (1 - tx) + L(y0, x0 + 1) * tx) * (1 - ty) +
                          (L(y0 + 1, x0) * (1 - tx) + L(y0 + 1, x0 + 1) * tx) * ty;
    }
  }
  return out;
}

// Per-pixel multiplicative texture field around 1.
inline std::vector<double> texture_field(Texture texture, int size, Rng& rng) {
  std::vector<double> f(static_cast<std::size_t>(size) * size, 1.0);
  if (texture == Texture::kNoise) {
    const auto n = value_noise(size, 8, rng);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = 1.0 + 0.2 * n[i];
  } else if (texture == Texture::kStripes) {
    const double phi = uniform(rng, 0.0, std::numbers::pi);
    const double period = uniform(rng, 5.0, 8.0);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        f[y * size + x] = 0.8 + 0.2 * std::sin(2 * std::numbers::pi *
                                               (x * std::cos(phi) + y * std::sin(phi)) / period);
  }
  return f;
}

inline void paint(Image& img, const Mask& region, const std::array<double, 3>& color,
                  Texture texture, Rng& rng) {
  const auto field = texture_field(texture, img.width, rng);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (!region.at(y, x)) continue;
      const double f = field[y * img.width + x];
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(color[c] * f);
    }
}

inline std::optional<ShapeRecord> place_shape(ShapeFamily family, double area, int size,
                                               const Mask* avoid, Rng& rng) {
  for (int attempt = 0; attempt < 40; ++attempt) {
    ShapeRecord s = shapes::make_shape(family, area, 0, 0, rng);
    const double r = shapes::extent(s) + 1.0;
    if (2 * r >= size) return std::nullopt;
    s = shapes::translated(s, uniform(rng, r, size - r), uniform(rng, r, size - r));
    if (avoid) {
      const Mask m = shapes::rasterize(s, size);
      bool overlap = false;
      for (std::size_t i = 0; i < m.data.size() && !overlap; ++i) overlap = m.data[i] && avoid->data[i];
      if (overlap) continue;
    }
    return s;
  }
  return std::nullopt;
}

}  // namespace detail

// Renders n_classes x n_per_class samples. Every class has its own shape
// family, size band and color; each image also carries `distractors` objects
// of other classes that are not part of the mask.
inline Dataset generate_synthetic_dataset(const DomainSpec& spec, int n_classes, int n_per_class,
                                          std::uint64_t seed) {
  spec.validate();
  if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
  if (n_per_class < 2) throw ConfigError("n_per_class must be >= 2");
  const int size = spec.canvas_size;
  const double canvas = static_cast<double>(size) * size;
  if (spec.fg_scale_range.lo * canvas < 8.0) {
    throw ConfigError("canvas_size " + std::to_string(size) +
                      " too small for fg_scale_range min " + std::to_string(spec.fg_scale_range.lo));
  }
  if (spec.fg_scale_range.hi > 0.45) {
    throw ConfigError("fg_scale_range max " + std::to_string(spec.fg_scale_range.hi) +
                      " leaves no room for background on the canvas");
  }
  const std::uint64_t domain_hash = detail::fnv1a(spec.domain_id);
  Rng domain_rng(mix_seed(seed, domain_hash));
  const std::array<double, 3> bg_base =
      detail::hsv_to_rgb(uniform(domain_rng, 0.0, 1.0), 0.35, uniform(domain_rng, 0.25, 0.45));

  Dataset ds;
  ds.domain_id = spec.domain_id;
  for (int c = 0; c < n_classes; ++c) {
    const detail::ClassSignature sig = detail::class_signature(spec, c);
    for (int k = 0; k < n_per_class; ++k) {
      Rng rng(mix_seed(mix_seed(seed, domain_hash), static_cast<std::uint64_t>(c * 100003 + k)));
      Sample sample;
      sample.class_id = c;
      sample.domain_id = spec.domain_id;
      sample.index = static_cast<int>(ds.samples.size());
      Image img(size, size, 3);
      std::array<double, 3> bg = bg_base;
      for (double& v : bg) v = std::clamp(v + uniform(rng, -0.05, 0.05), 0.0, 1.0);
      detail::paint(img, Mask(size, size, 1), bg, spec.texture, rng);

      // Target first so distractors can be kept off it.
      std::optional<ShapeRecord> target;
      Mask target_mask;
      for (int attempt = 0; attempt < 50 && !target; ++attempt) {
        const double frac = uniform(rng, sig.area.lo, sig.area.hi);
        auto s = detail::place_shape(sig.family, frac * canvas, size, nullptr, rng);
        if (!s) continue;
        Mask m = shapes::rasterize(*s, size);
        const double ratio = m.foreground_ratio();
        if (ratio < spec.fg_scale_range.lo || ratio > spec.fg_scale_range.hi) continue;
        target = s;
        target_mask = std::move(m);
      }
      if (!target) {
        throw ConfigError("could not render class " + std::to_string(c) + " within fg_scale_range on a " +
                          std::to_string(size) + "px canvas");
      }
      Mask occupied = target_mask;
      for (int d = 0; d < spec.distractors; ++d) {
        int other = uniform_int(rng, 0, n_classes - 2);
        if (other >= c) ++other;
        const detail::ClassSignature osig = detail::class_signature(spec, other);
        const double frac = uniform(rng, osig.area.lo, osig.area.hi);
        auto s = detail::place_shape(osig.family, frac * canvas, size, &occupied, rng);
        if (!s) continue;
        const Mask m = shapes::rasterize(*s, size);
        detail::paint(img, m, osig.color, spec.texture, rng);
        for (std::size_t i = 0; i < m.data.size(); ++i) occupied.data[i] |= m.data[i];
      }
      detail::paint(img, target_mask, sig.color, spec.texture, rng);

      for (float& v : img.data) {
        if (spec.noise_std > 0) v += static_cast<float>(spec.noise_std * normal(rng));
        v = std::clamp(v, 0.0f, 1.0f);
      }
      if (spec.palette == Palette::kGrayscale) {
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            const float l = 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
            img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = std::clamp(l, 0.0f, 1.0f);
          }
      }
      sample.image = std::move(img);
      sample.mask = std::move(target_mask);
      sample.shape = target;
      ds.samples.push_back(std::move(sample));
    }
  }
  return ds;
}

// Stand-ins for four benchmark domains with different palette, texture and
// shape statistics.
inline std::vector<DomainSpec> default_domains(int canvas_size = 64) {
  std::vector<DomainSpec> d(4);
  d[0] = {"deepglobe_like", canvas_size, ShapeFamily::kPolygon, Texture::kStripes, Palette::kRgb, {0.06, 0.3}, 0.03, 1};
  d[1] = {"isic_like", canvas_size, ShapeFamily::kEllipse, Texture::kNoise, Palette::kRgb, {0.06, 0.3}, 0.02, 1};
  d[2] = {"chestx_like", canvas_size, ShapeFamily::kBlob, Texture::kNoise, Palette::kGrayscale, {0.06, 0.3}, 0.04, 1};
  d[3] = {"fss_like", canvas_size, ShapeFamily::kRectangle, Texture::kFlat, Palette::kRgb, {0.06, 0.3}, 0.02, 1};
  return d;
}

// ---------------------------------------------------------------------------
// Episodes

inline Episode sample_episode_for_class(const Dataset& ds, int class_id, int shot, std::uint64_t seed) {
  if (shot < 1) throw SamplingError("shot must be >= 1");
  std::vector<int> idx = ds.indices_of(class_id);
  if (static_cast<int>(idx.size()) < shot + 1) {
    throw SamplingError("class " + std::to_string(class_id) + " of domain " + ds.domain_id + " has " +
                        std::to_string(idx.size()) + " samples, need " + std::to_string(shot + 1));
  }
  Rng rng(seed);
  // Partial Fisher-Yates for shot + 1 distinct picks.
  for (int i = 0; i <= shot; ++i) {
    const int j = uniform_int(rng, i, static_cast<int>(idx.size()) - 1);
    std::swap(idx[i], idx[j]);
  }
  std::vector<Sample> support;
  for (int i = 0; i < shot; ++i) support.push_back(ds.samples[idx[i]]);
  return Episode(std::move(support), ds.samples[idx[shot]]);
}

inline Episode sample_episode(const Dataset& ds, int shot, std::uint64_t seed) {
  const std::vector<int> classes = ds.classes();
  if (classes.empty()) throw SamplingError("dataset " + ds.domain_id + " is empty");
  Rng rng(mix_seed(seed, 0x5eed));
  const int class_id = classes[uniform_int(rng, 0, static_cast<int>(classes.size()) - 1)];
  return sample_episode_for_class(ds, class_id, shot, mix_seed(seed, 0xc1a55));
}

// Heterogenization filter: every foreground ratio must lie in [tau_min, tau_max].
inline bool accept_episode(const Episode& ep, double tau_min, double tau_max) {
  if (!(0.0 <= tau_min && tau_min < tau_max && tau_max <= 1.0)) {
    throw ConfigError("accept_episode needs 0 <= tau_min < tau_max <= 1");
  }
  auto ok = [&](const Sample& s) {
    const double r = s.mask.foreground_ratio();
    return r >= tau_min && r <= tau_max;
  };
  return ok(ep.query) && std::all_of(ep.support.begin(), ep.support.end(), ok);
}

// Classes are split into n_folds groups by sorted position; returns
// (training classes, held-out classes) for `fold`.
inline std::pair<std::vector<int>, std::vector<int>> fold_classes(const std::vector<int>& classes,
                                                                  int n_folds, int fold) {
  if (n_folds < 1 || fold < 0 || fold >= n_folds) throw ConfigError("invalid fold selection");
  std::vector<int> sorted = classes;
  std::sort(sorted.begin(), sorted.end());
  std::pair<std::vector<int>, std::vector<int>> out;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (n_folds > 1 && static_cast<int>(i % n_folds) == fold) {
      out.second.push_back(sorted[i]);
    } else {
      out.first.push_back(sorted[i]);
    }
  }
  return out;
}

inline Dataset restrict_classes(const Dataset& ds, const std::vector<int>& keep) {
  Dataset out;
  out.domain_id = ds.domain_id;
  for (const Sample& s : ds.samples) {
    if (std::find(keep.begin(), keep.end(), s.class_id) != keep.end()) out.samples.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

namespace detail {

inline bool is_identity(const Range& r, double v) { return r.lo == v && r.hi == v; }

inline double draw(const Range& r, Rng& rng) { return r.lo == r.hi ? r.lo : uniform(rng, r.lo, r.hi); }

inline void flip(Sample& s, bool horizontal) {
  const int h = s.image.height, w = s.image.width, c = s.image.channels;
  Image img = s.image;
  Mask m = s.mask;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sy = horizontal ? y : h - 1 - y;
      const int sx = horizontal ? w - 1 - x : x;
      for (int k = 0; k < c; ++k) img.at(y, x, k) = s.image.at(sy, sx, k);
      m.at(y, x) = s.mask.at(sy, sx);
    }
  s.image = std::move(img);
  s.mask = std::move(m);
}

inline double bilinear_at(const float* data, int h, int w, int stride, int ch, double fy, double fx) {
  if (fy < -0.5 || fx < -0.5 || fy > h - 0.5 || fx > w - 0.5) return 0.0;
  fy = std::clamp(fy, 0.0, h - 1.0);
  fx = std::clamp(fx, 0.0, w - 1.0);
  const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double ty = fy - y0, tx = fx - x0;
  auto at = [&](int y, int x) { return static_cast<double>(data[(static_cast<std::size_t>(y) * w + x) * stride + ch]); };
  return (at(y0, x0) * (1 - tx) + at(y0, x1) * tx) * (1 - ty) + (at(y1, x0) * (1 - tx) + at(y1, x1) * tx) * ty;
}

// Rotation/scale about the center followed by translation. Returns nullopt
// when the warped mask has no foreground left.
inline std::optional<Sample> affine(const Sample& s, double rot_deg, double scale, double tx, double ty) {
  const int h = s.image.height, w = s.image.width, c = s.image.channels;
  const double th = rot_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double cy = h / 2.0, cx = w / 2.0;
  Sample out = s;
  out.index = -1;
  out.shape.reset();
  std::vector<float> mask_f(s.mask.data.begin(), s.mask.data.end());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // Inverse map output pixel center to source coordinates.
      const double ox = x + 0.5 - cx - tx, oy = y + 0.5 - cy - ty;
      const double sx = (cs * ox + sn * oy) / scale + cx - 0.5;
      const double sy = (-sn * ox + cs * oy) / scale + cy - 0.5;
      for (int k = 0; k < c; ++k) {
        out.image.at(y, x, k) = static_cast<float>(bilinear_at(s.image.data.data(), h, w, c, k, sy, sx));
      }
      out.mask.at(y, x) = bilinear_at(mask_f.data(), h, w, 1, 0, sy, sx) >= 0.5 ? 1 : 0;
    }
  if (out.mask.count() == 0) return std::nullopt;
  return out;
}

}  // namespace detail

inline Sample augment(const Sample& sample, const AugmentPolicy& policy, std::uint64_t seed) {
  policy.validate();
  sample.validate();
  Rng rng(seed);
  Sample out = sample;
  bool changed = false;
  if (policy.hflip_prob > 0 && uniform01(rng) < policy.hflip_prob) {
    detail::flip(out, true);
    changed = true;
  }
  if (policy.vflip_prob > 0 && uniform01(rng) < policy.vflip_prob) {
    detail::flip(out, false);
    changed = true;
  }
  const bool has_affine = policy.rotation_deg > 0 || policy.translate_frac > 0 ||
                          !detail::is_identity(policy.scale, 1.0);
  if (has_affine) {
    bool done = false;
    for (int attempt = 0; attempt <= policy.max_affine_retries && !done; ++attempt) {
      const double rot = uniform(rng, -policy.rotation_deg, policy.rotation_deg);
      const double sc = detail::draw(policy.scale, rng);
      const double tx = uniform(rng, -policy.translate_frac, policy.translate_frac) * out.image.width;
      const double ty = uniform(rng, -policy.translate_frac, policy.translate_frac) * out.image.height;
      if (auto warped = detail::affine(out, rot, sc, tx, ty)) {
        out = std::move(*warped);
        done = true;
      }
    }
    if (!done) {
      spdlog::warn("augment: affine moved all foreground out of frame after {} tries; "
                   "returning the untransformed sample", policy.max_affine_retries + 1);
      return sample;
    }
    changed = true;
  }

  Image& img = out.image;
  if (!detail::is_identity(policy.brightness, 0.0)) {
    const double delta = detail::draw(policy.brightness, rng);
    for (float& v : img.data) v = std::clamp(static_cast<float>(v + delta), 0.0f, 1.0f);
    changed = true;
  }
  if (!detail::is_identity(policy.contrast, 1.0)) {
    const double f = detail::draw(policy.contrast, rng);
    double mean = 0;
    for (float v : img.data) mean += v;
    mean /= static_cast<double>(img.data.size());
    for (float& v : img.data) v = std::clamp(static_cast<float>((v - mean) * f + mean), 0.0f, 1.0f);
    changed = true;
  }
  if (!detail::is_identity(policy.saturation, 1.0) && img.channels == 3) {
    const double f = detail::draw(policy.saturation, rng);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const double l = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
        for (int k = 0; k < 3; ++k) {
          img.at(y, x, k) = std::clamp(static_cast<float>(l + (img.at(y, x, k) - l) * f), 0.0f, 1.0f);
        }
      }
    changed = true;
  }
  if (changed) {
    out.index = -1;
    out.shape.reset();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark preprocessing

inline constexpr int kDeepGlobeSize = 2448;
inline constexpr int kDeepGlobeTile = 408;
inline constexpr int kIsicSize = 512;
inline constexpr int kChestXSize = 1024;
inline constexpr std::uint8_t kDeepGlobeUnknown = 6;

// Image plus a per-pixel class index map.
struct LabeledImage {
  Image image;
  std::vector<std::uint8_t> labels;  // H x W
};

struct Tile {
  LabeledImage content;
  int row = 0;
  int col = 0;
  std::set<std::uint8_t> classes() const {
    return {content.labels.begin(), content.labels.end()};
  }
};

// DeepGlobe color code -> class index (urban, agriculture, rangeland, forest,
// water, barren, unknown).
inline std::uint8_t deepglobe_class_from_rgb(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const int code = (r >= 128 ? 4 : 0) | (g >= 128 ? 2 : 0) | (b >= 128 ? 1 : 0);
  switch (code) {
    case 0b011: return 0;
    case 0b110: return 1;
    case 0b101: return 2;
    case 0b010: return 3;
    case 0b001: return 4;
    case 0b111: return 5;
    default: return kDeepGlobeUnknown;
  }
}

// The full 6 x 6 grid of 408 px tiles, row-major.
inline std::vector<Tile> deepglobe_grid(const LabeledImage& in) {
  if (in.image.height != kDeepGlobeSize || in.image.width != kDeepGlobeSize ||
      in.labels.size() != static_cast<std::size_t>(kDeepGlobeSize) * kDeepGlobeSize) {
    throw ShapeError("deepglobe tiling needs a " + std::to_string(kDeepGlobeSize) + "x" +
                     std::to_string(kDeepGlobeSize) + " input, got " + std::to_string(in.image.height) +
                     "x" + std::to_string(in.image.width));
  }
  constexpr int n = kDeepGlobeSize / kDeepGlobeTile;
  const int ch = in.image.channels;
  std::vector<Tile> tiles;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      Tile t;
      t.row = r;
      t.col = c;
      t.content.image = Image(kDeepGlobeTile, kDeepGlobeTile, ch);
      t.content.labels.resize(static_cast<std::size_t>(kDeepGlobeTile) * kDeepGlobeTile);
      for (int y = 0; y < kDeepGlobeTile; ++y) {
        const int sy = r * kDeepGlobeTile + y;
        const float* src = &in.image.data[(static_cast<std::size_t>(sy) * kDeepGlobeSize + c * kDeepGlobeTile) * ch];
        std::copy_n(src, kDeepGlobeTile * ch, &t.content.image.data[static_cast<std::size_t>(y) * kDeepGlobeTile * ch]);
        std::copy_n(&in.labels[static_cast<std::size_t>(sy) * kDeepGlobeSize + c * kDeepGlobeTile], kDeepGlobeTile,
                    &t.content.labels[static_cast<std::size_t>(y) * kDeepGlobeTile]);
      }
      tiles.push_back(std::move(t));
    }
  return tiles;
}

// Grid tiles that contain at least two classes and no 'unknown' pixels.
inline std::vector<Tile> tile_deepglobe(const LabeledImage& in) {
  std::vector<Tile> kept;
  for (Tile& t : deepglobe_grid(in)) {
    const auto cls = t.classes();
    if (cls.size() < 2 || cls.count(kDeepGlobeUnknown)) continue;
    kept.push_back(std::move(t));
  }
  return kept;
}

// One binary-mask sample per class present in the tile.
inline std::vector<Sample> tile_samples(const Tile& tile, const std::string& domain_id) {
  std::vector<Sample> out;
  const int size = tile.content.image.height;
  for (std::uint8_t cls : tile.classes()) {
    Sample s;
    s.image = tile.content.image;
    s.mask = Mask(size, tile.content.image.width);
    for (std::size_t i = 0; i < s.mask.data.size(); ++i) s.mask.data[i] = tile.content.labels[i] == cls;
    s.class_id = cls;
    s.domain_id = domain_id;
    out.push_back(std::move(s));
  }
  return out;
}

// Bilinear image resize, nearest-neighbor mask resize to target x target.
inline Sample resize_benchmark(const Sample& sample, int target) {
  if (target <= 0) throw ConfigError("resize target must be positive, got " + std::to_string(target));
  Sample out = sample;
  out.image = resize_bilinear(sample.image, target, target);
  out.mask = resize_nearest(sample.mask, target, target);
  out.index = -1;
  out.shape.reset();
  return out;
}

// ---------------------------------------------------------------------------
// On-disk layout: <root>/<domain>/class_<id>/<n>.png and <n>_mask.png, plus
// <root>/manifest.csv with lines "relative_path,class_id,domain_id".

inline constexpr const char* kManifestName = "manifest.csv";
inline constexpr const char* kManifestHeader = "relative_path,class_id,domain_id";

inline std::filesystem::path mask_path_for(const std::filesystem::path& image_path) {
  std::filesystem::path p = image_path;
  p.replace_filename(image_path.stem().string() + "_mask.png");
  return p;
}

inline void save_datasets(const std::vector<Dataset>& datasets, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  std::ofstream manifest(root / kManifestName);
  if (!manifest) throw IoError("cannot write " + (root / kManifestName).string());
  manifest << kManifestHeader << "\n";
  for (const Dataset& ds : datasets) {
    std::map<int, int> counter;
    for (const Sample& s : ds.samples) {
      char name[64];
      std::snprintf(name, sizeof(name), "class_%03d/%04d.png", s.class_id, counter[s.class_id]++);
      const fs::path rel = fs::path(ds.domain_id) / name;
      fs::create_directories((root / rel).parent_path(), ec);
      if (ec) throw IoError("cannot create " + (root / rel).parent_path().string());
      write_png(root / rel, s.image);
      write_mask_png(root / mask_path_for(rel), s.mask);
      manifest << rel.generic_string() << "," << s.class_id << "," << ds.domain_id << "\n";
    }
  }
  if (!manifest) throw IoError("failed writing manifest in " + root.string());
}

// Returns one dataset per domain in order of first appearance.
inline std::vector<Dataset> load_datasets(const std::filesystem::path& root) {
  std::ifstream manifest(root / kManifestName);
  if (!manifest) throw IoError("missing manifest " + (root / kManifestName).string());
  std::vector<Dataset> out;
  std::map<std::string, std::size_t> where;
  std::string line;
  int line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty() || (line_no == 1 && line == kManifestHeader)) continue;
    std::stringstream ss(line);
    std::string rel, cls, dom;
    if (!std::getline(ss, rel, ',') || !std::getline(ss, cls, ',') || !std::getline(ss, dom)) {
      throw IoError("malformed manifest line " + std::to_string(line_no) + ": " + line);
    }
    if (!where.count(dom)) {
      where[dom] = out.size();
      out.push_back(Dataset{dom, {}});
    }
    Dataset& ds = out[where[dom]];
    Sample s;
    s.image = read_png(root / rel);
    s.mask = read_mask_png(root / mask_path_for(rel));
    s.class_id = std::stoi(cls);
    s.domain_id = dom;
    s.index = static_cast<int>(ds.samples.size());
    s.validate();
    ds.samples.push_back(std::move(s));
  }
  return out;
}

}  // namespace tavp

#endif  // TAVP_DATASETS_HPP_
