// Copyright 2026 The lnseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lnseg/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "lnseg/error.hpp"

namespace lnseg::png {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    throw Error(Errc::IoError, "cannot open " + path.string());
  }
  return f;
}

void write_gray(const std::filesystem::path& path, int width, int height, int bit_depth,
                int color_type, const std::vector<std::uint8_t>& bytes) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(Errc::IoError, "libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(Errc::IoError, "libpng write failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

GrayImage read_gray(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error(Errc::MalformedFile, "not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(Errc::ResourceError, "libpng init failed");
  }
  GrayImage out;
  std::vector<std::uint8_t> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(Errc::MalformedFile, "undecodable PNG: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  if (depth == 16) png_set_swap(png);  // host little-endian words
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info) == 16 ? 16 : 8;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * out.height);
  rows.resize(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  out.samples.resize(static_cast<std::size_t>(out.width) * out.height);
  for (int y = 0; y < out.height; ++y) {
    const std::uint8_t* row = rows[y];
    for (int x = 0; x < out.width; ++x) {
      std::uint16_t v;
      if (out.bit_depth == 16) {
        v = static_cast<std::uint16_t>(row[2 * x] | (row[2 * x + 1] << 8));
      } else {
        v = row[x];
      }
      out.samples[static_cast<std::size_t>(y) * out.width + x] = v;
    }
  }
  return out;
}

ImageF read_unit(const std::filesystem::path& path) {
  const GrayImage g = read_gray(path);
  const float scale = g.bit_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
  ImageF img(g.height, g.width);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = g.samples[i] * scale;
  return img;
}

void write_gray16(const std::filesystem::path& path, const ImageF& image) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(image.size()) * 2);
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const float p = std::clamp(image.data()[i], 0.0f, 1.0f);
    const auto v = static_cast<std::uint16_t>(std::lround(p * 65535.0f));
    bytes[2 * i] = static_cast<std::uint8_t>(v >> 8);  // PNG is big-endian
    bytes[2 * i + 1] = static_cast<std::uint8_t>(v & 0xff);
  }
  write_gray(path, static_cast<int>(image.cols()), static_cast<int>(image.rows()), 16,
             PNG_COLOR_TYPE_GRAY, bytes);
}

void write_mask(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::uint8_t> bytes(mask.size());
  for (Eigen::Index i = 0; i < mask.size(); ++i) bytes[i] = mask.data()[i] ? 255 : 0;
  write_gray(path, static_cast<int>(mask.cols()), static_cast<int>(mask.rows()), 8,
             PNG_COLOR_TYPE_GRAY, bytes);
}

void write_rgb8(const std::filesystem::path& path, int width, int height,
                const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) {
    throw Error(Errc::ShapeMismatch, "rgb buffer size does not match dimensions");
  }
  write_gray(path, width, height, 8, PNG_COLOR_TYPE_RGB, rgb);
}

}  // namespace lnseg::png
