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

#include "lnseg/morphology.hpp"

#include <algorithm>
#include <cmath>

#include "lnseg/error.hpp"

namespace lnseg {

StructuringElement StructuringElement::ellipse(int k) {
  if (k < 1) throw Error(Errc::RangeError, "structuring element size must be >= 1");
  StructuringElement se;
  se.size = k;
  const int r = k / 2;
  const int c = k / 2;
  const double inv_r2 = r ? 1.0 / (double(r) * r) : 0.0;
  for (int i = 0; i < k; ++i) {
    const int dy = i - r;
    if (std::abs(dy) > r) continue;
    const int w = static_cast<int>(std::lrint(c * std::sqrt((double(r) * r - double(dy) * dy) * inv_r2)));
    const int j1 = std::max(c - w, 0);
    const int j2 = std::min(c + w + 1, k);
    if (j2 > j1) se.runs.push_back({dy, j1 - c, j2 - 1 - c});
  }
  return se;
}

std::vector<std::pair<int, int>> StructuringElement::offsets() const {
  std::vector<std::pair<int, int>> out;
  for (const auto& run : runs) {
    for (int dx = run.dx_lo; dx <= run.dx_hi; ++dx) out.emplace_back(dx, run.dy);
  }
  return out;
}

int StructuringElement::count() const {
  int n = 0;
  for (const auto& run : runs) n += run.dx_hi - run.dx_lo + 1;
  return n;
}

namespace {

using Prefix = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// prefix(y, x) = number of foreground pixels in row y, columns [0, x).
Prefix row_prefix(const Mask& m) {
  Prefix p(m.rows(), m.cols() + 1);
  for (Eigen::Index y = 0; y < m.rows(); ++y) {
    p(y, 0) = 0;
    for (Eigen::Index x = 0; x < m.cols(); ++x) p(y, x + 1) = p(y, x) + (m(y, x) ? 1 : 0);
  }
  return p;
}

}  // namespace

Mask erode(const Mask& mask, const StructuringElement& se) {
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  const Prefix p = row_prefix(mask);
  Mask out = Mask::Ones(h, w);
  for (const auto& run : se.runs) {
    for (int y = 0; y < h; ++y) {
      const int sy = y + run.dy;
      if (sy < 0 || sy >= h) continue;  // outside the domain imposes nothing
      for (int x = 0; x < w; ++x) {
        if (!out(y, x)) continue;
        const int lo = std::max(x + run.dx_lo, 0);
        const int hi = std::min(x + run.dx_hi, w - 1);
        if (hi < lo) continue;
        if (p(sy, hi + 1) - p(sy, lo) != hi - lo + 1) out(y, x) = 0;
      }
    }
  }
  return out;
}

Mask dilate(const Mask& mask, const StructuringElement& se) {
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  const Prefix p = row_prefix(mask);
  Mask out = Mask::Zero(h, w);
  for (const auto& run : se.runs) {
    for (int y = 0; y < h; ++y) {
      const int sy = y - run.dy;
      if (sy < 0 || sy >= h) continue;
      for (int x = 0; x < w; ++x) {
        if (out(y, x)) continue;
        const int lo = std::max(x - run.dx_hi, 0);
        const int hi = std::min(x - run.dx_lo, w - 1);
        if (hi < lo) continue;
        if (p(sy, hi + 1) - p(sy, lo) > 0) out(y, x) = 1;
      }
    }
  }
  return out;
}

Mask open(const Mask& mask, const StructuringElement& se) { return dilate(erode(mask, se), se); }

Mask close(const Mask& mask, const StructuringElement& se) { return erode(dilate(mask, se), se); }

Mask morph_open_close(const Mask& mask, int k) {
  const auto se = StructuringElement::ellipse(k);
  return close(open(mask, se), se);
}

Mask binarize(const ImageF& image, double threshold) {
  return (image >= static_cast<float>(threshold)).cast<std::uint8_t>();
}

}  // namespace lnseg
