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

#include "lnseg/dataio.hpp"

namespace lnseg {

/// Desk-scale stand-in for a nodule corpus: Gaussian-noise chest-like
/// backgrounds with two elliptical lung fields and one bright soft-edged
/// disk per image, placed inside a lung.
struct SyntheticSpec {
  int count = 40;
  int dim = 64;
  std::uint64_t seed = 1;
  double radius_min = 0.04;  // fractions of dim
  double radius_max = 0.07;
  double background = 0.35;
  double lung_level = 0.2;
  double noise_sd = 0.05;
  double amplitude = 0.45;
  double edge_softness = 0.8;  // pixels
};

/// Dataset spec for the files write_synthetic_dataset emits: 16-bit PNG at
/// native_dim = dim, sizes in pixels.
DatasetSpec synthetic_dataset_spec(int dim);

/// Records with pixels, lung mask and annotation. Subtlety, malignancy,
/// sex and diagnosis cycle deterministically so every stratifier has
/// several strata; side and lobe follow the nodule position.
std::vector<ImageRecord> make_synthetic_records(const SyntheticSpec& spec);

/// Writes images/<id>.png, lung_masks/<id>.png, annotations.csv and a
/// ready-to-run config.json into `dir`.
void write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace lnseg
