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

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lnseg/dataio.hpp"
#include "lnseg/image.hpp"

namespace lnseg {

enum class RoiShape { Square, Circle };
std::string_view to_string(RoiShape s);
std::optional<RoiShape> parse_roi_shape(std::string_view text);

struct RaterConfig {
  double eccentricity_max = 0.95;
  int area_divisor = 128;
  double roi_intensity_min = 0.5;
  int centroid_tol_divisor = 16;
  double binarize_threshold = 0.5;
  RoiShape roi_shape = RoiShape::Square;

  void validate() const;
};

/// Blobs must have an ellipse area strictly above dim^2 / area_divisor^2.
double min_area(int dim, const RaterConfig& cfg);
/// Matching radius dim / centroid_tol_divisor.
double centroid_tolerance(int dim, const RaterConfig& cfg);

enum class DetectionStatus { Candidate, FilteredNoise, TruePositive, FalsePositive };
std::string_view to_string(DetectionStatus s);

struct Detection {
  double center_x = 0, center_y = 0;
  double major_axis = 0, minor_axis = 0;  // full lengths
  double angle_deg = 0;                   // major axis from +x towards +y
  double eccentricity = 0;
  double area = 0;  // pi * (major/2) * (minor/2)
  double roi_mean = 0;
  int contour_points = 0;
  int pixel_count = 0;
  DetectionStatus status = DetectionStatus::Candidate;
};

struct RatingResult {
  std::string image_id;
  std::vector<Detection> detections;
  int tp = 0;
  int fp = 0;
  int filtered() const;
};

/// Pixel centres on the outer border of each 8-connected foreground
/// component, one contour per component in raster order of first pixel.
std::vector<std::vector<std::pair<int, int>>> trace_outer_contours(const Mask& mask);

struct EllipseFit {
  double center_x = 0, center_y = 0;
  double semi_major = 0, semi_minor = 0;
  double angle_deg = 0;
};

/// Direct least-squares ellipse fit (Fitzgibbon, numerically stable
/// Halir-Flusser form). Returns nullopt for fewer than five points or a
/// degenerate conic.
std::optional<EllipseFit> fit_ellipse(const std::vector<std::pair<int, int>>& points);

/// Binarizes, traces outer contours and fits an ellipse to each. Contours
/// with fewer than five distinct points, or whose points admit no ellipse,
/// come back as FilteredNoise with second-moment geometry of the component.
std::vector<Detection> detect_blobs(const ImageF& mask, const RaterConfig& cfg);

Detection filter_geometry(Detection det, int dim, const RaterConfig& cfg);

/// Mean of `mask` over the ROI centred on the detection: pixels whose
/// centres lie within minor_axis/2 of the centre in both axes (square) or
/// in Euclidean distance (circle), clipped to the image.
double roi_mean(const Detection& det, const ImageF& mask, const RaterConfig& cfg);
Detection filter_roi_intensity(Detection det, const ImageF& mask, const RaterConfig& cfg);

/// Nearest surviving detection within the tolerance becomes the true
/// positive; every other survivor is a false positive. Without ground truth
/// all survivors are false positives.
RatingResult match(std::vector<Detection> detections, const std::optional<NoduleAnnotation>& gt, int dim,
                   const RaterConfig& cfg);

/// detect -> geometry filter -> ROI filter -> match.
RatingResult rate_image(const std::string& image_id, const ImageF& mask,
                        const std::optional<NoduleAnnotation>& gt, const RaterConfig& cfg);

struct Aggregate {
  int n = 0;
  int tp = 0;
  int fp = 0;
  double sensitivity = 0;  // percent
  double fp_per_image = 0;
};

/// Throws EmptySet for no results.
Aggregate aggregate(const std::vector<RatingResult>& results);

/// One row per detection (or one empty-geometry row for images without
/// detections).
void write_ratings_csv(const std::filesystem::path& path, const std::vector<RatingResult>& results);

/// RGB audit image: mask as gray, true positives green, false positives
/// red, filtered detections blue, ground-truth nodule circle yellow.
void write_overlay(const std::filesystem::path& path, const ImageF& mask, const RatingResult& result,
                   const std::optional<NoduleAnnotation>& gt);

}  // namespace lnseg
