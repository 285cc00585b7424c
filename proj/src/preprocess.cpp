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

#include "lnseg/preprocess.hpp"

#include <string>

namespace lnseg {

std::string_view to_string(ResampleFilter f) {
  switch (f) {
    case ResampleFilter::Bilinear: return "bilinear";
    case ResampleFilter::Area: return "area";
    case ResampleFilter::Nearest: return "nearest";
  }
  return "area";
}

std::optional<ResampleFilter> parse_resample_filter(std::string_view text) {
  if (text == "bilinear") return ResampleFilter::Bilinear;
  if (text == "area") return ResampleFilter::Area;
  if (text == "nearest") return ResampleFilter::Nearest;
  return std::nullopt;
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Raw: return "raw";
    case Variant::Equalized: return "he";
    case Variant::Segmented: return "seg";
    case Variant::EqualizedSegmented: return "he_seg";
  }
  return "raw";
}

std::optional<Variant> parse_variant(std::string_view text) {
  if (text == "raw") return Variant::Raw;
  if (text == "he") return Variant::Equalized;
  if (text == "seg") return Variant::Segmented;
  if (text == "he_seg") return Variant::EqualizedSegmented;
  return std::nullopt;
}

bool is_standard_dim(int dim) { return dim == 512 || dim == 1024 || dim == 2048; }

void PreprocessConfig::validate(bool allow_nonstandard_dims) const {
  if (!is_power_of_two(target_dim)) {
    throw Error(Errc::SpecError, "target_dim must be a power of two, got " + std::to_string(target_dim));
  }
  if (!allow_nonstandard_dims && !is_standard_dim(target_dim)) {
    throw Error(Errc::SpecError, "target_dim must be 512, 1024 or 2048, got " + std::to_string(target_dim));
  }
  if (equalize_bins < 2) throw Error(Errc::SpecError, "equalize_bins must be >= 2");
}

PreprocessConfig PreprocessConfig::for_variant(Variant v, int target_dim) {
  PreprocessConfig cfg;
  cfg.equalize = v == Variant::Equalized || v == Variant::EqualizedSegmented;
  cfg.segment_lung = v == Variant::Segmented || v == Variant::EqualizedSegmented;
  cfg.target_dim = target_dim;
  return cfg;
}

namespace detail {

std::vector<std::vector<Tap>> resample_taps(Eigen::Index n_in, Eigen::Index n_out,
                                            ResampleFilter filter) {
  std::vector<std::vector<Tap>> taps(n_out);
  const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  if (filter == ResampleFilter::Nearest) {
    for (Eigen::Index i = 0; i < n_out; ++i) {
      auto j = static_cast<Eigen::Index>(std::floor((i + 0.5) * scale));
      taps[i].push_back({std::clamp<Eigen::Index>(j, 0, n_in - 1), 1.0});
    }
    return taps;
  }
  if (filter == ResampleFilter::Area && n_out < n_in) {
    for (Eigen::Index i = 0; i < n_out; ++i) {
      const double lo = i * scale;
      const double hi = (i + 1) * scale;
      auto j0 = static_cast<Eigen::Index>(std::floor(lo));
      auto j1 = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::ceil(hi)), n_in);
      for (Eigen::Index j = j0; j < j1; ++j) {
        const double overlap = std::min<double>(hi, j + 1) - std::max<double>(lo, j);
        if (overlap > 0) taps[i].push_back({j, overlap / scale});
      }
    }
    return taps;
  }
  // Bilinear with half-pixel centres and edge clamping.
  for (Eigen::Index i = 0; i < n_out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
    const auto j0 = static_cast<Eigen::Index>(std::floor(src));
    const double f = src - j0;
    if (f == 0.0 || j0 + 1 >= n_in) {
      taps[i].push_back({j0, 1.0});
    } else {
      taps[i].push_back({j0, 1.0 - f});
      taps[i].push_back({j0 + 1, f});
    }
  }
  return taps;
}

}  // namespace detail

ImageRecord run_pipeline(const ImageRecord& record, const PreprocessConfig& cfg) {
  cfg.validate(true);
  if (cfg.segment_lung && !record.lung_mask) {
    throw Error(Errc::MissingMask, "segment_lung requested but " + record.image_id + " has no lung mask");
  }
  ImageRecord out;
  out.image_id = record.image_id;
  out.interpolated = record.interpolated || cfg.target_dim > record.dim;

  ImageF pixels = record.pixels;
  if (cfg.equalize) pixels = equalize_histogram(pixels, cfg.equalize_bins);
  if (cfg.segment_lung) pixels = apply_lung_mask(pixels, *record.lung_mask);
  out.pixels = resample(pixels, cfg.target_dim, cfg.resample_filter);
  out.dim = cfg.target_dim;

  const double scale = static_cast<double>(cfg.target_dim) / record.dim;
  if (record.annotation) {
    NoduleAnnotation ann = *record.annotation;
    // Pixel centres sit at integer coordinates, so map through the
    // half-pixel convention the resampler uses.
    ann.center_x = (ann.center_x + 0.5) * scale - 0.5;
    ann.center_y = (ann.center_y + 0.5) * scale - 0.5;
    ann.diameter_px *= scale;
    out.annotation = ann;
  }
  if (record.lung_mask) {
    out.lung_mask = resample(*record.lung_mask, cfg.target_dim, ResampleFilter::Nearest);
  }
  return out;
}

}  // namespace lnseg
