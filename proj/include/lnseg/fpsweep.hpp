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
#include <vector>

#include "lnseg/dataio.hpp"
#include "lnseg/rater.hpp"

namespace lnseg {

struct SweepConfig {
  int kernel_min = 3;
  int kernel_max = 90;
  int kernel_step = 3;

  void validate() const;
  /// kernel_min, kernel_min + step, ... up to kernel_max inclusive.
  std::vector<int> kernels() const;
};

struct RocPoint {
  int kernel_size = 0;
  double sensitivity = 0;  // percent
  double fp_per_image = 0;
};

/// One composite probability map with its ground truth.
struct SweepItem {
  std::string image_id;
  ImageF composite;
  std::optional<NoduleAnnotation> annotation;
};

/// Binarizes at the rater threshold, opens then closes with the
/// elliptical element of size k, and rates the {0,1} result.
RatingResult rate_after_morphology(const SweepItem& item, int k, const RaterConfig& rater_cfg);

/// One point per kernel size, in kernel order. Throws EmptySet for no items.
std::vector<RocPoint> sweep(const std::vector<SweepItem>& items, const SweepConfig& sweep_cfg,
                            const RaterConfig& rater_cfg);

/// Columns kernel_size, sensitivity, fp_per_image.
void write_roc_csv(const std::filesystem::path& path, const std::vector<RocPoint>& points);
std::vector<RocPoint> read_roc_csv(const std::filesystem::path& path);

/// Sensitivity against FP per image, one polyline per named curve.
void write_roc_svg(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, std::vector<RocPoint>>>& curves);

}  // namespace lnseg
