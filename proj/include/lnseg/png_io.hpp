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

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lnseg/image.hpp"

namespace lnseg::png {

struct GrayImage {
  int width = 0;
  int height = 0;
  int bit_depth = 8;  // 8 or 16 after decoding
  std::vector<std::uint16_t> samples;  // row-major
};

/// Decodes any PNG to single-channel gray (palette and RGB are converted).
/// Throws Error(MalformedFile) on undecodable input.
GrayImage read_gray(const std::filesystem::path& path);

/// Decodes and scales to [0,1] by the decoded bit depth.
ImageF read_unit(const std::filesystem::path& path);

/// 16-bit gray, value = round(clamp(p, 0, 1) * 65535).
void write_gray16(const std::filesystem::path& path, const ImageF& image);

/// 8-bit gray, nonzero mask pixels are written as 255.
void write_mask(const std::filesystem::path& path, const Mask& mask);

/// 8-bit RGB, `rgb` holds width*height*3 bytes.
void write_rgb8(const std::filesystem::path& path, int width, int height,
                const std::vector<std::uint8_t>& rgb);

}  // namespace lnseg::png
