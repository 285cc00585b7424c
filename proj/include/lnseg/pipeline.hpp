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
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "lnseg/config.hpp"
#include "lnseg/rater.hpp"
#include "lnseg/report.hpp"

namespace lnseg {

enum class Stage { Ingest, Preprocess, Train, Ensemble, Rate, Sweep, Report, All };
std::string_view to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view text);

/// Loads a dataset's annotated records, then applies the exclusion list,
/// the in-lung filter and the subtlety category. Pixels are read only when
/// `load_pixels` is set; lung masks whenever a mask directory is given.
std::vector<ImageRecord> load_dataset(const DatasetConfig& cfg, bool load_pixels = true);

/// Ids listed one per line; '#' starts a comment. An absent path or an
/// empty list gives an empty set.
std::set<std::string> read_id_list(const std::filesystem::path& path);

struct ValidationReport {
  std::vector<std::string> issues;
  std::vector<std::string> experiments;  // depth x resolution x variant
  int training_cells = 0;
  int annotated_images = 0;
  int positive_images = 0;  // after every dataset filter
  std::optional<int> external_images;

  bool ok() const { return issues.empty(); }
  std::string text() const;
};

/// Checks the schema and paths and, when those pass, counts the dataset.
ValidationReport validate_experiment(const ExperimentConfig& cfg);

struct RunOptions {
  bool resume = true;
  int devices = 1;
};

struct StageSummary {
  int work_done = 0;  // cells trained, images rated, files written...
  int skipped = 0;    // up to date from an earlier run
  std::vector<std::string> errors;
};

/// Stage runner over one experiment config. Outputs live under
/// cfg.output_root:
///   ingest/      dataset.json, folds.json
///   preprocessed/<variant>_<res>/  images/<id>.png, annotations.json
///   models/      manifest.json, <exp>/fold_NN/epoch_NN.ckpt
///   composites/<exp>/fold_NN/<id>.png
///   ratings/<exp>/ ratings.csv, results.json
///   sweeps/<exp>/roc.csv
///   reports/     summary.json, <exp>/...
/// Every stage stamps its inputs' hash and skips work whose stamp matches.
class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, RunOptions opts = {});

  /// Throws StageDependencyError naming the missing upstream artifact,
  /// PartialFailure after finishing the remaining cells when some failed.
  StageSummary run(Stage stage);

  const ExperimentConfig& config() const { return cfg_; }
  std::filesystem::path root() const { return cfg_.output_root; }
  std::filesystem::path manifest_path() const;
  std::vector<std::string> experiments() const;
  Provenance provenance() const;

 private:
  StageSummary ingest();
  StageSummary preprocess();
  StageSummary train();
  StageSummary ensemble();
  StageSummary rate();
  StageSummary sweep();
  StageSummary report();

  ExperimentConfig cfg_;
  RunOptions opts_;
};

struct ExternalResult {
  std::string experiment;
  int images = 0;
  int folds = 0;
  bool interpolated = false;
  std::vector<Aggregate> per_fold;
  Aggregate pooled;
  std::vector<StratifiedTable> tables;
  std::filesystem::path out_dir;
};

/// Rates every fold model of the configured experiment against the
/// external dataset (preprocessed with the configured variant, HE plus lung
/// masks by default). Throws EmptySet for an empty external set and
/// StageDependencyError when the manifest has no matching trained cells.
ExternalResult external_test(const ExperimentConfig& cfg, const std::filesystem::path& manifest_path);

}  // namespace lnseg
