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
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lnseg/dataio.hpp"
#include "lnseg/ednet.hpp"
#include "lnseg/fpsweep.hpp"
#include "lnseg/preprocess.hpp"
#include "lnseg/rater.hpp"
#include "lnseg/report.hpp"
#include "lnseg/trainer.hpp"

namespace lnseg {

enum class DatasetKind { Table, BBox };

/// Where a dataset lives and how to read it. `Table` reads an annotation
/// table (JSRT style); `BBox` reads a bounding-box file plus a curation
/// list (NIH style).
struct DatasetConfig {
  DatasetKind kind = DatasetKind::Table;
  DatasetSpec spec = DatasetSpec::jsrt();
  std::filesystem::path image_dir;
  std::string image_extension;  // empty: ".IMG" for raw16, ".png" otherwise
  std::filesystem::path annotations;
  char delimiter = ',';
  std::filesystem::path lung_mask_dir;  // optional; masks are <id>.png
  bool in_lung_only = false;            // JSRT-A construction
  std::filesystem::path exclusions;     // optional id list removed after loading
  std::optional<CategoryLabel> category;
  std::filesystem::path bbox_file;
  std::filesystem::path curation_list;

  std::filesystem::path image_path(const std::string& id) const;
  std::filesystem::path lung_mask_path(const std::string& id) const;
};

struct ExternalConfig {
  DatasetConfig dataset;
  int depth = 6;
  int resolution = 1024;
  Variant variant = Variant::EqualizedSegmented;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::filesystem::path output_root = "runs";
  std::uint64_t seed = 0;
  bool desk_scale = false;
  int folds = 10;

  DatasetConfig dataset;
  std::vector<Variant> variants{Variant::Raw, Variant::Equalized, Variant::Segmented, Variant::EqualizedSegmented};
  std::vector<int> depths{5, 6, 7};
  std::vector<int> resolutions{512, 1024, 2048};
  nn::NormMode norm = nn::NormMode::Instance;
  int base_filters = 16;

  int equalize_bins = 256;
  ResampleFilter resample_filter = ResampleFilter::Area;
  TrainConfig train;
  RaterConfig rater;
  SweepConfig sweep;
  bool sweep_enabled = true;
  std::vector<Stratifier> stratifiers{all_stratifiers()};
  std::optional<ExternalConfig> external;

  std::filesystem::path source;  // file the config came from
  nlohmann::json raw;            // as parsed, before path resolution

  /// Parses a JSON config. Relative paths resolve against the file's
  /// directory, "${VAR}" in a path expands from the environment, and
  /// LNSEG_OUTPUT_ROOT replaces output_root. Throws ConfigError.
  static ExperimentConfig load(const std::filesystem::path& path);
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

  /// Schema and filesystem problems, each naming the offending key or path.
  std::vector<std::string> validate() const;

  nn::ModelSpec model_spec(int depth, int resolution) const;
  PreprocessConfig preprocess_config(Variant v, int resolution) const;
  MatrixGrid grid() const;
  /// Content hash of the parsed config.
  std::string hash() const;
};

/// Canonical JSON of the settings that affect results.
nlohmann::json to_json(const ExperimentConfig& cfg);

}  // namespace lnseg
