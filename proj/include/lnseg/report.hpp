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
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lnseg/dataio.hpp"
#include "lnseg/fpsweep.hpp"
#include "lnseg/rater.hpp"

namespace lnseg {

enum class Stratifier { Subtlety, Malignancy, Location, Sex, Diagnosis, Category, None };
std::string_view to_string(Stratifier s);
std::optional<Stratifier> parse_stratifier(std::string_view text);
const std::vector<Stratifier>& all_stratifiers();

/// Stratum of one annotation: enum names, "side_lobe" for location, the
/// case-folded trimmed diagnosis, the tightest category letter, or "all".
/// Missing information maps to "unknown".
std::string stratum_label(const std::optional<NoduleAnnotation>& ann, Stratifier s);

struct StratumRow {
  std::string label;
  int n = 0;
  int tp = 0;
  int fp = 0;
  double sensitivity = 0;     // percent
  double fp_per_image = 0;
  std::optional<double> sensitivity_sd;  // across folds, when known
};

struct StratifiedTable {
  Stratifier stratifier = Stratifier::None;
  std::vector<StratumRow> rows;  // ordered by label
  int total() const;
};

/// Aggregates the results per stratum. Annotations are looked up by
/// image id; an image without one lands in "unknown". Throws EmptySet for
/// no results.
StratifiedTable stratify(const std::vector<RatingResult>& results,
                         const std::map<std::string, NoduleAnnotation>& annotations, Stratifier s);

struct FoldStats {
  double mean = 0;
  double sd = 0;  // sample standard deviation
  int folds = 0;
};

/// Mean and sample SD of values; needs at least two (InsufficientHistory).
FoldStats fold_statistics(const std::vector<double>& values);

/// Pools per-fold tables of one stratifier: counts are summed, and each
/// stratum's sensitivity_sd is the sample SD of its per-fold sensitivities
/// over the folds where it occurs (left empty below two folds).
StratifiedTable pool_folds(const std::vector<StratifiedTable>& per_fold);

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string code_version;
};

struct ReportBundle {
  std::string experiment;
  Provenance provenance;
  std::vector<StratifiedTable> tables;
  std::vector<RocPoint> roc;
  std::vector<std::string> cells;  // trainer manifest cell ids
  std::map<std::string, std::string> notes;
};

/// Writes table_<stratifier>.csv per table, roc.csv when there are ROC
/// points, and summary.json (schema_version 1). Output bytes depend only on
/// the bundle. Throws IoError when the destination is not writable.
std::vector<std::filesystem::path> emit(const ReportBundle& bundle, const std::filesystem::path& destination);

void write_table_csv(const std::filesystem::path& path, const StratifiedTable& table);

/// Compile-time version string.
std::string_view code_version();

}  // namespace lnseg
