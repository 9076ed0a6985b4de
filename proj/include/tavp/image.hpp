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
#ifndef TAVP_IMAGE_HPP_
#define TAVP_IMAGE_HPP_

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "tavp/error.hpp"
#include "tavp/tensor.hpp"

namespace tavp {

// H x W x C intensities in [0, 1], stored interleaved.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  // C x H x W copy for the network.
  Tensor to_tensor() const {
    Tensor t({channels, height, width});
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < channels; ++c) t.at(c, y, x) = at(y, x, c);
    return t;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// H x W binary mask, values in {0, 1}.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
  }
  double foreground_ratio() const {
    return data.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(data.size());
  }
  bool is_binary() const {
    return std::all_of(data.begin(), data.end(), [](std::uint8_t v) { return v <= 1; });
  }
  Mask complement() const {
    Mask m = *this;
    for (auto& v : m.data) v = v ? 0 : 1;
    return m;
  }
  Tensor to_tensor() const {
    Tensor t({height, width});
    for (std::size_t i = 0; i < data.size(); ++i) t[i] = data[i];
    return t;
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

// Bilinear resampling with half-pixel centers (align_corners = false).
inline Image resize_bilinear(const Image& in, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize target must be positive");
  if (out_h == in.height && out_w == in.width) return in;
  Image out(out_h, out_w, in.channels);
  const double sy = static_cast<double>(in.height) / out_h;
  const double sx = static_cast<double>(in.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, in.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, in.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, in.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, in.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < in.channels; ++c) {
        const double top = in.at(y0, x0, c) * (1 - wx) + in.at(y0, x1, c) * wx;
        const double bot = in.at(y1, x0, c) * (1 - wx) + in.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

inline Mask resize_nearest(const Mask& in, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize target must be positive");
  if (out_h == in.height && out_w == in.width) return in;
  Mask out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(static_cast<int>((y + 0.5) * in.height / out_h), in.height - 1);
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(static_cast<int>((x + 0.5) * in.width / out_w), in.width - 1);
      out.at(y, x) = in.at(sy, sx);
    }
  }
  return out;
}

// Bilinear downsampling of a mask to a real-valued H x W weight map, with the
// same sampling geometry as resize_bilinear.
inline Tensor mask_weights(const Mask& m, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize target must be positive");
  Tensor t({out_h, out_w});
  if (out_h == m.height && out_w == m.width) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = m.data[i];
    return t;
  }
  const double sy = static_cast<double>(m.height) / out_h;
  const double sx = static_cast<double>(m.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, m.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, m.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, m.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, m.width - 1);
      const double wx = fx - x0;
      const double top = m.at(y0, x0) * (1 - wx) + m.at(y0, x1) * wx;
      const double bot = m.at(y1, x0) * (1 - wx) + m.at(y1, x1) * wx;
      t.at(y, x) = top * (1 - wy) + bot * wy;
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// PNG

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

inline std::unique_ptr<std::FILE, FileCloser> open_file(const std::filesystem::path& path,
                                                        const char* mode) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

// 8-bit rows, channels 1 (gray) or 3 (rgb).
inline void write_png_bytes(const std::filesystem::path& path, int h, int w, int channels,
                            const std::vector<std::uint8_t>& bytes) {
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng write failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, w, h, 8, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * w * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct RawPng {
  int height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> bytes;
};

// Decodes to 8-bit gray or RGB; alpha is dropped, palettes expanded.
inline RawPng read_png_bytes(const std::filesystem::path& path) {
  auto f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed for " + path.string());
  }
  RawPng raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("not a readable PNG: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  raw.bytes.resize(static_cast<std::size_t>(raw.height) * raw.width * raw.channels);
  rows.resize(raw.height);
  for (int y = 0; y < raw.height; ++y) {
    rows[y] = raw.bytes.data() + static_cast<std::size_t>(y) * raw.width * raw.channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

inline std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw IoError("PNG writer supports 1 or 3 channels");
  std::vector<std::uint8_t> bytes(img.data.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(), detail::quantize);
  detail::write_png_bytes(path, img.height, img.width, img.channels, bytes);
}

// Single-channel PNG with values {0, 255}.
inline void write_mask_png(const std::filesystem::path& path, const Mask& m) {
  std::vector<std::uint8_t> bytes(m.data.size());
  std::transform(m.data.begin(), m.data.end(), bytes.begin(),
                 [](std::uint8_t v) { return static_cast<std::uint8_t>(v ? 255 : 0); });
  detail::write_png_bytes(path, m.height, m.width, 1, bytes);
}

inline Image read_png(const std::filesystem::path& path) {
  detail::RawPng raw = detail::read_png_bytes(path);
  Image img(raw.height, raw.width, raw.channels);
  for (std::size_t i = 0; i < raw.bytes.size(); ++i) img.data[i] = raw.bytes[i] / 255.0f;
  return img;
}

// Any nonzero gray level (or any nonzero channel) counts as foreground.
inline Mask read_mask_png(const std::filesystem::path& path) {
  detail::RawPng raw = detail::read_png_bytes(path);
  Mask m(raw.height, raw.width);
  for (std::size_t p = 0; p < m.data.size(); ++p) {
    std::uint8_t v = 0;
    for (int c = 0; c < raw.channels; ++c) v = std::max(v, raw.bytes[p * raw.channels + c]);
    m.data[p] = v > 127 ? 1 : 0;
  }
  return m;
}

// Raw 8-bit channels, e.g. for color-coded label maps.
inline detail::RawPng read_png_raw(const std::filesystem::path& path) {
  return detail::read_png_bytes(path);
}

}  // namespace tavp

#endif  // TAVP_IMAGE_HPP_
