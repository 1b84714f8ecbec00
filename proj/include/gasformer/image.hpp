/*
 * Copyright (c) 2026, The Gasformer C++ Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "gasformer/error.hpp"

namespace gasformer {

/// Row-major 2-D grid, indexed at(x, y).
template <typename V>
struct Grid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<V> data;

  Grid() = default;
  Grid(std::size_t w, std::size_t h, V fill = V{}) : width(w), height(h), data(w * h, fill) {}

  V& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  const V& at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
  std::size_t size() const { return data.size(); }
  bool same_extent(std::size_t w, std::size_t h) const { return width == w && height == h; }
  template <typename U>
  bool same_extent(const Grid<U>& o) const { return width == o.width && height == o.height; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using GrayImage = Grid<float>;
using LabelMap = Grid<std::uint8_t>;
using BinaryImage = Grid<std::uint8_t>;
using RegionLabels = Grid<std::int32_t>;

/// Decoded 8-bit PNG: `channels` is 1 (gray) or 3 (RGB), interleaved.
struct PngImage {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

namespace png_detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace png_detail

/// Reads any 8/16-bit PNG, normalizing to 8-bit gray or RGB (alpha dropped,
/// palettes expanded).
inline PngImage read_png(const std::filesystem::path& path) {
  png_detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw DataError("cannot open image " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw DataError("not a PNG file: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialization failed");
  }
  PngImage img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  img.pixels.resize(img.width * img.height * img.channels);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (img.channels != 1 && img.channels != 3) throw DataError("unsupported PNG channel layout: " + path.string());
  return img;
}

inline void write_png(const std::filesystem::path& path, const PngImage& img) {
  if (img.channels != 1 && img.channels != 3) throw DataError("write_png: channels must be 1 or 3");
  png_detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialization failed");
  }
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.pixels.data() + y * img.width * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads a PNG as gray intensities; RGB is averaged per pixel.
inline GrayImage read_gray(const std::filesystem::path& path) {
  const PngImage p = read_png(path);
  GrayImage g(p.width, p.height);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (p.channels == 1) {
      g.data[i] = p.pixels[i];
    } else {
      const std::uint8_t* px = &p.pixels[i * 3];
      g.data[i] = (static_cast<float>(px[0]) + px[1] + px[2]) / 3.0f;
    }
  }
  return g;
}

inline void write_label_png(const std::filesystem::path& path, const LabelMap& m) {
  write_png(path, PngImage{m.width, m.height, 1, m.data});
}

}  // namespace gasformer
