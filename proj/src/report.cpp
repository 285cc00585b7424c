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

#include "lnseg/report.hpp"

#include <spdlog/fmt/fmt.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "lnseg/error.hpp"

#ifndef LNSEG_VERSION
#define LNSEG_VERSION "0.0.0"
#endif

namespace lnseg {

using nlohmann::json;

std::string_view to_string(Stratifier s) {
  switch (s) {
    case Stratifier::Subtlety: return "subtlety";
    case Stratifier::Malignancy: return "malignancy";
    case Stratifier::Location: return "location";
    case Stratifier::Sex: return "sex";
    case Stratifier::Diagnosis: return "diagnosis";
    case Stratifier::Category: return "category";
    case Stratifier::None: return "none";
  }
  return "none";
}

std::optional<Stratifier> parse_stratifier(std::string_view text) {
  for (Stratifier s : all_stratifiers()) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

const std::vector<Stratifier>& all_stratifiers() {
  static const std::vector<Stratifier> all{Stratifier::Subtlety, Stratifier::Malignancy, Stratifier::Location,
                                           Stratifier::Sex,      Stratifier::Diagnosis,  Stratifier::Category,
                                           Stratifier::None};
  return all;
}

namespace {

std::string fold_case(std::string_view text) {
  std::size_t b = 0, e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  std::string out;
  bool space = false;
  for (char c : text.substr(b, e - b)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void finish(StratumRow& row) {
  row.sensitivity = row.n ? 100.0 * row.tp / row.n : 0.0;
  row.fp_per_image = row.n ? double(row.fp) / row.n : 0.0;
}

}  // namespace

std::string stratum_label(const std::optional<NoduleAnnotation>& ann, Stratifier s) {
  if (s == Stratifier::None) return "all";
  if (!ann) return "unknown";
  switch (s) {
    case Stratifier::Subtlety: return std::string(to_string(ann->subtlety));
    case Stratifier::Malignancy: return std::string(to_string(ann->malignancy));
    case Stratifier::Location:
      if (ann->side == Side::Unknown && ann->lobe == Lobe::Unknown) return "unknown";
      return std::string(to_string(ann->side)) + "_" + std::string(to_string(ann->lobe));
    case Stratifier::Sex: return std::string(to_string(ann->sex));
    case Stratifier::Diagnosis: {
      std::string d = fold_case(ann->diagnosis);
      return d.empty() ? "unknown" : d;
    }
    case Stratifier::Category: {
      const auto c = tightest_category(ann->subtlety);
      return c ? std::string(to_string(*c)) : "unknown";
    }
    case Stratifier::None: break;
  }
  return "all";
}

int StratifiedTable::total() const {
  int n = 0;
  for (const auto& r : rows) n += r.n;
  return n;
}

StratifiedTable stratify(const std::vector<RatingResult>& results,
                         const std::map<std::string, NoduleAnnotation>& annotations, Stratifier s) {
  if (results.empty()) throw Error(Errc::EmptySet, "cannot stratify an empty result set");
  std::map<std::string, StratumRow> rows;
  for (const auto& r : results) {
    std::optional<NoduleAnnotation> ann;
    if (auto it = annotations.find(r.image_id); it != annotations.end()) ann = it->second;
    const std::string label = stratum_label(ann, s);
    auto& row = rows[label];
    row.label = label;
    row.n += 1;
    row.tp += r.tp;
    row.fp += r.fp;
  }
  StratifiedTable table;
  table.stratifier = s;
  for (auto& [label, row] : rows) {
    finish(row);
    table.rows.push_back(row);
  }
  return table;
}

FoldStats fold_statistics(const std::vector<double>& values) {
  if (values.size() < 2) throw Error(Errc::InsufficientHistory, "fold statistics need at least two folds");
  FoldStats st;
  st.folds = static_cast<int>(values.size());
  for (double v : values) st.mean += v;
  st.mean /= st.folds;
  double ss = 0;
  for (double v : values) ss += (v - st.mean) * (v - st.mean);
  st.sd = std::sqrt(ss / (st.folds - 1));
  return st;
}

StratifiedTable pool_folds(const std::vector<StratifiedTable>& per_fold) {
  if (per_fold.empty()) throw Error(Errc::EmptySet, "no fold tables to pool");
  std::map<std::string, StratumRow> rows;
  std::map<std::string, std::vector<double>> sens;
  for (const auto& t : per_fold) {
    if (t.stratifier != per_fold.front().stratifier) {
      throw Error(Errc::SpecError, "pool_folds: tables use different stratifiers");
    }
    for (const auto& r : t.rows) {
      auto& row = rows[r.label];
      row.label = r.label;
      row.n += r.n;
      row.tp += r.tp;
      row.fp += r.fp;
      sens[r.label].push_back(r.sensitivity);
    }
  }
  StratifiedTable out;
  out.stratifier = per_fold.front().stratifier;
  for (auto& [label, row] : rows) {
    finish(row);
    if (sens[label].size() >= 2) row.sensitivity_sd = fold_statistics(sens[label]).sd;
    out.rows.push_back(row);
  }
  return out;
}

void write_table_csv(const std::filesystem::path& path, const StratifiedTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << "stratum,n,tp,fp,sensitivity,fp_per_image,sensitivity_sd\n";
  for (const auto& r : table.rows) {
    out << fmt::format("{},{},{},{},{:.6f},{:.6f},{}\n", csv_field(r.label), r.n, r.tp, r.fp, r.sensitivity,
                       r.fp_per_image, r.sensitivity_sd ? fmt::format("{:.6f}", *r.sensitivity_sd) : "");
  }
  if (!out) throw Error(Errc::IoError, "failed writing " + path.string());
}

std::vector<std::filesystem::path> emit(const ReportBundle& bundle, const std::filesystem::path& destination) {
  std::error_code ec;
  std::filesystem::create_directories(destination, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + destination.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;

  json summary;
  summary["schema_version"] = 1;
  summary["experiment"] = bundle.experiment;
  summary["provenance"] = {{"config_hash", bundle.provenance.config_hash},
                           {"seed", bundle.provenance.seed},
                           {"code_version", bundle.provenance.code_version}};
  summary["tables"] = json::object();
  for (const auto& t : bundle.tables) {
    const auto path = destination / ("table_" + std::string(to_string(t.stratifier)) + ".csv");
    write_table_csv(path, t);
    written.push_back(path);
    json rows = json::array();
    for (const auto& r : t.rows) {
      json row = {{"stratum", r.label},          {"n", r.n},
                  {"tp", r.tp},                  {"fp", r.fp},
                  {"sensitivity", r.sensitivity}, {"fp_per_image", r.fp_per_image}};
      if (r.sensitivity_sd) row["sensitivity_sd"] = *r.sensitivity_sd;
      rows.push_back(std::move(row));
    }
    summary["tables"][std::string(to_string(t.stratifier))] = {{"file", path.filename().string()},
                                                               {"rows", std::move(rows)}};
  }
  json notes = json::object();
  for (const auto& [k, v] : bundle.notes) notes[k] = v;
  if (bundle.roc.empty()) {
    summary["roc"] = nullptr;
    notes["roc"] = "no ROC points were supplied";
  } else {
    const auto path = destination / "roc.csv";
    write_roc_csv(path, bundle.roc);
    written.push_back(path);
    summary["roc"] = {{"file", "roc.csv"}, {"points", bundle.roc.size()}};
  }
  summary["notes"] = std::move(notes);
  summary["cells"] = bundle.cells;

  const auto path = destination / "summary.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << summary.dump(2) << '\n';
  written.push_back(path);
  return written;
}

std::string_view code_version() { return LNSEG_VERSION; }

}  // namespace lnseg
