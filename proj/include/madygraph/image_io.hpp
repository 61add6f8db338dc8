// Copyright 2026 The MadyGraph Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or  implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================
//
// 8-bit grayscale PGM/PNG frames and color-coded flow images.

#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "madygraph/tensor.hpp"

namespace mdg::io {

/// 8-bit image, row-major, `channels` interleaved samples per pixel.
struct Image8 {
  std::size_t height = 0, width = 0, channels = 1;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  for (int ch = in.peek(); ch != EOF; ch = in.peek()) {
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
}

inline std::size_t read_pnm_int(std::istream& in, const std::string& path) {
  skip_pnm_space(in);
  long long v = -1;
  if (!(in >> v) || v <= 0) throw FormatError(path + ": malformed PGM header");
  return static_cast<std::size_t>(v);
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

/// Binary (P5) or plain (P2) graymap with maxval <= 255.
inline Image8 read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P2") throw FormatError(path.string() + ": not a PGM file");
  Image8 img;
  img.width = detail::read_pnm_int(in, path.string());
  img.height = detail::read_pnm_int(in, path.string());
  const std::size_t maxval = detail::read_pnm_int(in, path.string());
  if (maxval > 255) throw FormatError(path.string() + ": only 8-bit PGM is supported");
  img.pixels.resize(img.width * img.height);
  if (magic == "P5") {
    in.get();
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!in) throw FormatError(path.string() + ": truncated PGM payload");
  } else {
    for (auto& p : img.pixels) {
      int v = -1;
      if (!(in >> v) || v < 0 || v > int(maxval)) throw FormatError(path.string() + ": bad PGM sample");
      p = static_cast<std::uint8_t>(v);
    }
  }
  if (maxval != 255)
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::lround(p * 255.0 / double(maxval)));
  return img;
}

inline void write_pgm(const Image8& img, const std::filesystem::path& path) {
  if (img.channels != 1) throw std::invalid_argument("write_pgm: image must be single-channel");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

/// Any PNG, converted to 8-bit grayscale.
inline Image8 read_png_gray(const std::filesystem::path& path) {
  detail::File f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  Image8 img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": invalid PNG");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  const png_byte color = png_get_color_type(png, info);
  if (color & PNG_COLOR_MASK_COLOR || color == PNG_COLOR_TYPE_PALETTE) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  if (png_get_channels(png, info) != 1) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": could not convert PNG to grayscale");
  }
  img.pixels.resize(img.width * img.height);
  rows.resize(img.height);
  for (std::size_t r = 0; r < img.height; ++r) rows[r] = img.pixels.data() + r * img.width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

/// 8-bit gray (1 channel) or RGB (3 channels) PNG.
inline void write_png(const Image8& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_png: need 1 or 3 channels");
  detail::File f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < img.height; ++r)
    rows[r] = const_cast<png_bytep>(img.pixels.data() + r * img.width * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Dispatches on the extension (.pgm or .png, case-insensitive).
inline Image8 read_gray(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  if (ext == ".pgm") return read_pgm(path);
  if (ext == ".png") return read_png_gray(path);
  throw FormatError(path.string() + ": unsupported frame format (expected .pgm or .png)");
}

inline void write_gray(const Image8& img, const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  if (ext == ".pgm") return write_pgm(img, path);
  if (ext == ".png") return write_png(img, path);
  throw std::invalid_argument(path.string() + ": unsupported frame format (expected .pgm or .png)");
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Frame `b` of an (H, W, B) cube in [0, 1], rounded to 8 bits.
template <class T>
Image8 frame_to_image(const Tensor<T>& cube, std::size_t b) {
  Image8 img{cube.dim(0), cube.dim(1), 1, std::vector<std::uint8_t>(cube.dim(0) * cube.dim(1))};
  const std::size_t depth = cube.dim(2);
  for (std::size_t p = 0; p < img.pixels.size(); ++p) img.pixels[p] = to_byte(double(cube[p * depth + b]));
  return img;
}

/// Direction as hue, magnitude / max_magnitude as saturation; (H, W, 2) flow.
template <class T>
Image8 flow_to_image(const Tensor<T>& uv, double max_magnitude) {
  const std::size_t h = uv.dim(0), w = uv.dim(1);
  Image8 img{h, w, 3, std::vector<std::uint8_t>(h * w * 3)};
  for (std::size_t p = 0; p < h * w; ++p) {
    const double u = uv[p * 2], v = uv[p * 2 + 1];
    const double hue = (std::atan2(-v, -u) / std::numbers::pi + 1.0) * 3.0;  // [0, 6)
    const double sat = std::min(1.0, std::hypot(u, v) / std::max(max_magnitude, 1e-12));
    const int sector = std::min(5, int(hue));
    const double f = hue - sector;
    const double p0 = 1 - sat, q = 1 - sat * f, t = 1 - sat * (1 - f);
    const std::array<std::array<double, 3>, 6> rgb = {{{1, t, p0}, {q, 1, p0}, {p0, 1, t},
                                                        {p0, q, 1}, {t, p0, 1}, {1, p0, q}}};
    for (std::size_t k = 0; k < 3; ++k) img.pixels[p * 3 + k] = to_byte(rgb[sector][k]);
  }
  return img;
}

}  // namespace mdg::io
