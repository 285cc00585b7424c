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

#include <vector>

#include "lnseg/image.hpp"

namespace lnseg {

/// Horizontal run of structuring-element offsets: (dx, dy) for every dx in
/// [dx_lo, dx_hi].
struct SeRun {
  int dy = 0;
  int dx_lo = 0;
  int dx_hi = 0;
};

/// Elliptical structuring element of width and height k with its anchor at
/// (k/2, k/2). Row i (dy = i - r, r = k/2) holds the columns
/// [max(c - w, 0), min(c + w + 1, k)) with c = k/2 and
/// w = lrint(c * sqrt((r^2 - dy^2) / r^2)), or w = 0 when r = 0. This is the
/// membership rule OpenCV's MORPH_ELLIPSE uses, so both produce the same
/// element for every k.
struct StructuringElement {
  int size = 1;
  std::vector<SeRun> runs;

  static StructuringElement ellipse(int k);
  /// Every (dx, dy) offset, row by row.
  std::vector<std::pair<int, int>> offsets() const;
  int count() const;
};

// Set semantics on the finite image domain D with element B:
//   dilate(X) = { x + b : x in X, b in B } intersected with D
//   erode(X)  = { p in D : p + b in X for every b with p + b in D }
// The pair is an adjunction on D, so open = dilate(erode(.)) is
// anti-extensive and idempotent, close = erode(dilate(.)) extensive and
// idempotent. Each runs in O(pixels * k) using per-row prefix counts.
Mask erode(const Mask& mask, const StructuringElement& se);
Mask dilate(const Mask& mask, const StructuringElement& se);
Mask open(const Mask& mask, const StructuringElement& se);
Mask close(const Mask& mask, const StructuringElement& se);

/// Opening followed by closing with the elliptical element of size k.
/// Throws RangeError when k < 1.
Mask morph_open_close(const Mask& mask, int k);

/// Pixels >= threshold become 1.
Mask binarize(const ImageF& image, double threshold);

}  // namespace lnseg
