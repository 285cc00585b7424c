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

#include <algorithm>
#include <cmath>
#include <optional>
#include <string_view>
#include <vector>

#include "lnseg/dataio.hpp"
#include "lnseg/error.hpp"
#include "lnseg/image.hpp"

namespace lnseg {

enum class ResampleFilter { Bilinear, Area, Nearest };

std::string_view to_string(ResampleFilter f);
std::optional<ResampleFilter> parse_resample_filter(std::string_view text);

/// The four preprocessing arms of the experiment matrix.
enum class Variant { Raw, Equalized, Segmented, EqualizedSegmented };

std::string_view to_string(Variant v);
std::optional<Variant> parse_variant(std::string_view text);

struct PreprocessConfig {
  bool equalize = false;
  bool segment_lung = false;
  int target_dim = 2048;
  int equalize_bins = 256;
  // Area averaging when shrinking; enlarging always falls back to bilinear.
  ResampleFilter resample_filter = ResampleFilter::Area;

  /// Standard dims are 512, 1024 and 2048. Smaller powers of two are only
  /// accepted for desk-scale fixtures.
  void validate(bool allow_nonstandard_dims = false) const;

  static PreprocessConfig for_variant(Variant v, int target_dim);
};

bool is_standard_dim(int dim);

namespace detail {

struct Tap {
  Eigen::Index index;
  double weight;
};

// One list of taps per output sample along a single axis.
std::vector<std::vector<Tap>> resample_taps(Eigen::Index n_in, Eigen::Index n_out,
                                            ResampleFilter filter);

}  // namespace detail

/// Global histogram equalisation: each pixel is mapped to the empirical CDF
/// of its quantised bin, floor(v * bins) clamped to bins - 1. A constant
/// image therefore maps to 1.
template <typename Derived>
Image<typename Derived::Scalar> equalize_histogram(const Eigen::ArrayBase<Derived>& img,
                                                   int bins = 256) {
  using Scalar = typename Derived::Scalar;
  if (img.size() == 0) throw Error(Errc::ShapeError, "equalize_histogram: empty image");
  if (bins < 2) throw Error(Errc::SpecError, "equalize_histogram: bins must be >= 2");
  auto bin_of = [bins](Scalar v) {
    const long b = static_cast<long>(std::floor(static_cast<double>(v) * bins));
    return static_cast<int>(std::clamp<long>(b, 0, bins - 1));
  };
  std::vector<long long> hist(bins, 0);
  for (Eigen::Index r = 0; r < img.rows(); ++r)
    for (Eigen::Index c = 0; c < img.cols(); ++c) ++hist[bin_of(img(r, c))];
  std::vector<Scalar> lut(bins);
  long long running = 0;
  const double total = static_cast<double>(img.size());
  for (int b = 0; b < bins; ++b) {
    running += hist[b];
    lut[b] = static_cast<Scalar>(static_cast<double>(running) / total);
  }
  Image<Scalar> out(img.rows(), img.cols());
  for (Eigen::Index r = 0; r < img.rows(); ++r)
    for (Eigen::Index c = 0; c < img.cols(); ++c) out(r, c) = lut[bin_of(img(r, c))];
  return out;
}

/// Zeroes every pixel outside the lung field.
template <typename Derived>
Image<typename Derived::Scalar> apply_lung_mask(const Eigen::ArrayBase<Derived>& img,
                                                const Mask& lung_mask) {
  if (img.rows() != lung_mask.rows() || img.cols() != lung_mask.cols()) {
    throw Error(Errc::ShapeMismatch, "lung mask shape differs from image shape");
  }
  using Scalar = typename Derived::Scalar;
  return (lung_mask != 0).select(img.derived(), Image<Scalar>::Zero(img.rows(), img.cols()));
}

/// Square resize to target_dim x target_dim. Same-size input is copied
/// unchanged; masks and other integer arrays should use Nearest.
template <typename Derived>
Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> resample(
    const Eigen::ArrayBase<Derived>& img, int target_dim, ResampleFilter filter) {
  using Scalar = typename Derived::Scalar;
  using Out = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  if (!is_square(img)) throw Error(Errc::ShapeError, "resample: input must be square");
  if (target_dim <= 0) throw Error(Errc::SpecError, "resample: target_dim must be positive");
  if (img.rows() == target_dim) return Out(img);

  const auto taps = detail::resample_taps(img.rows(), target_dim, filter);
  if (filter == ResampleFilter::Nearest) {
    Out out(target_dim, target_dim);
    for (int r = 0; r < target_dim; ++r)
      for (int c = 0; c < target_dim; ++c) out(r, c) = img(taps[r][0].index, taps[c][0].index);
    return out;
  }
  // Separable pass: columns of each input row first, then rows.
  Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tmp(img.rows(), target_dim);
  for (Eigen::Index r = 0; r < img.rows(); ++r) {
    for (int c = 0; c < target_dim; ++c) {
      double acc = 0.0;
      for (const auto& t : taps[c]) acc += t.weight * static_cast<double>(img(r, t.index));
      tmp(r, c) = acc;
    }
  }
  Out out(target_dim, target_dim);
  for (int r = 0; r < target_dim; ++r) {
    for (int c = 0; c < target_dim; ++c) {
      double acc = 0.0;
      for (const auto& t : taps[r]) acc += t.weight * tmp(t.index, c);
      out(r, c) = static_cast<Scalar>(acc);
    }
  }
  return out;
}

/// Equalise (whole image) -> lung mask -> resample, then rescale the
/// annotation and the lung mask to target_dim.
ImageRecord run_pipeline(const ImageRecord& record, const PreprocessConfig& cfg);

}  // namespace lnseg
