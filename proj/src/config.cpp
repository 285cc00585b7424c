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

#include "lnseg/config.hpp"

#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <set>

#include "lnseg/error.hpp"
#include "lnseg/hash.hpp"

namespace lnseg {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path DatasetConfig::image_path(const std::string& id) const {
  std::string ext = image_extension;
  if (ext.empty()) ext = spec.raw_format.container == Container::Raw16 ? ".IMG" : ".png";
  return image_dir / (id + ext);
}

fs::path DatasetConfig::lung_mask_path(const std::string& id) const { return lung_mask_dir / (id + ".png"); }

namespace {

[[noreturn]] void fail(const std::string& what) { throw Error(Errc::ConfigError, what); }

std::string expand_env(const std::string& text, const std::string& key) {
  std::string out;
  for (std::size_t i = 0; i < text.size();) {
    if (text.compare(i, 2, "${") == 0) {
      const auto end = text.find('}', i + 2);
      if (end == std::string::npos) fail(key + ": unterminated ${ in '" + text + "'");
      const std::string var = text.substr(i + 2, end - i - 2);
      const char* value = std::getenv(var.c_str());
      if (!value) fail(key + ": environment variable " + var + " is not set");
      out += value;
      i = end + 1;
    } else {
      out.push_back(text[i++]);
    }
  }
  return out;
}

fs::path resolve(const json& j, const char* field, const std::string& key, const fs::path& base) {
  if (!j.contains(field) || j.at(field).is_null()) return {};
  if (!j.at(field).is_string()) fail(key + "." + field + " must be a string");
  fs::path p = expand_env(j.at(field).get<std::string>(), key + "." + field);
  if (p.empty()) return p;
  if (p.is_relative()) p = base / p;
  return p.lexically_normal();
}

template <typename T>
T get(const json& j, const char* field, T fallback, const std::string& key) {
  if (!j.contains(field)) return fallback;
  try {
    return j.at(field).get<T>();
  } catch (const json::exception&) {
    fail(key + "." + field + " has the wrong type");
  }
}

template <typename E, typename Parse>
E get_enum(const json& j, const char* field, E fallback, const std::string& key, Parse parse) {
  if (!j.contains(field)) return fallback;
  const auto text = get<std::string>(j, field, "", key);
  const std::optional<E> v = parse(text);
  if (!v) fail(key + "." + field + ": unknown value '" + text + "'");
  return *v;
}

DatasetSpec parse_spec(const json& j, const std::string& key) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "jsrt") return DatasetSpec::jsrt();
    if (name == "nih") return DatasetSpec::nih();
    fail(key + ": unknown preset '" + name + "'");
  }
  if (!j.is_object()) fail(key + " must be a preset name or an object");
  DatasetSpec s = DatasetSpec::jsrt();
  const auto preset = get<std::string>(j, "preset", "jsrt", key);
  if (preset == "nih") s = DatasetSpec::nih();
  else if (preset != "jsrt") fail(key + ".preset: unknown preset '" + preset + "'");
  s.name = get<std::string>(j, "name", s.name, key);
  s.pixel_spacing_mm = get<double>(j, "pixel_spacing_mm", s.pixel_spacing_mm, key);
  s.native_dim = get<int>(j, "native_dim", s.native_dim, key);
  const auto container = get<std::string>(j, "container", s.raw_format.container == Container::Raw16 ? "raw16" : "png", key);
  if (container == "raw16") s.raw_format.container = Container::Raw16;
  else if (container == "png") s.raw_format.container = Container::Png;
  else fail(key + ".container: unknown value '" + container + "'");
  s.raw_format.bit_depth = get<int>(j, "bit_depth", s.raw_format.bit_depth, key);
  const auto order = get<std::string>(j, "byte_order", s.raw_format.byte_order == ByteOrder::Big ? "big" : "little", key);
  if (order == "big") s.raw_format.byte_order = ByteOrder::Big;
  else if (order == "little") s.raw_format.byte_order = ByteOrder::Little;
  else fail(key + ".byte_order: unknown value '" + order + "'");
  s.raw_format.intensity_inverted = get<bool>(j, "intensity_inverted", s.raw_format.intensity_inverted, key);
  const auto units = get<std::string>(j, "size_units", s.size_units == SizeUnits::Millimetres ? "mm" : "px", key);
  if (units == "mm") s.size_units = SizeUnits::Millimetres;
  else if (units == "px") s.size_units = SizeUnits::Pixels;
  else fail(key + ".size_units: unknown value '" + units + "'");
  return s;
}

json spec_json(const DatasetSpec& s) {
  return {{"name", s.name},
          {"pixel_spacing_mm", s.pixel_spacing_mm},
          {"native_dim", s.native_dim},
          {"container", s.raw_format.container == Container::Raw16 ? "raw16" : "png"},
          {"bit_depth", s.raw_format.bit_depth},
          {"byte_order", s.raw_format.byte_order == ByteOrder::Big ? "big" : "little"},
          {"intensity_inverted", s.raw_format.intensity_inverted},
          {"size_units", s.size_units == SizeUnits::Millimetres ? "mm" : "px"}};
}

DatasetConfig parse_dataset(const json& j, const std::string& key, const fs::path& base) {
  if (!j.is_object()) fail(key + " must be an object");
  DatasetConfig d;
  const auto kind = get<std::string>(j, "kind", "table", key);
  if (kind == "table") d.kind = DatasetKind::Table;
  else if (kind == "bbox") d.kind = DatasetKind::BBox;
  else fail(key + ".kind: unknown value '" + kind + "'");
  d.spec = d.kind == DatasetKind::BBox ? DatasetSpec::nih() : DatasetSpec::jsrt();
  if (j.contains("spec")) d.spec = parse_spec(j.at("spec"), key + ".spec");
  d.image_dir = resolve(j, "image_dir", key, base);
  d.image_extension = get<std::string>(j, "image_extension", "", key);
  d.annotations = resolve(j, "annotations", key, base);
  const auto delim = get<std::string>(j, "delimiter", ",", key);
  if (delim.size() != 1) fail(key + ".delimiter must be one character");
  d.delimiter = delim[0];
  d.lung_mask_dir = resolve(j, "lung_mask_dir", key, base);
  d.in_lung_only = get<bool>(j, "in_lung_only", false, key);
  d.exclusions = resolve(j, "exclusions", key, base);
  if (j.contains("category") && !j.at("category").is_null()) {
    const auto text = get<std::string>(j, "category", "", key);
    d.category = parse_category(text);
    if (!d.category) fail(key + ".category: unknown value '" + text + "'");
  }
  d.bbox_file = resolve(j, "bbox_file", key, base);
  d.curation_list = resolve(j, "curation_list", key, base);
  return d;
}

json dataset_json(const DatasetConfig& d) {
  json j = {{"kind", d.kind == DatasetKind::Table ? "table" : "bbox"},
            {"spec", spec_json(d.spec)},
            {"image_dir", d.image_dir.generic_string()},
            {"image_extension", d.image_extension},
            {"annotations", d.annotations.generic_string()},
            {"delimiter", std::string(1, d.delimiter)},
            {"lung_mask_dir", d.lung_mask_dir.generic_string()},
            {"in_lung_only", d.in_lung_only},
            {"exclusions", d.exclusions.generic_string()},
            {"bbox_file", d.bbox_file.generic_string()},
            {"curation_list", d.curation_list.generic_string()}};
  j["category"] = d.category ? json(std::string(to_string(*d.category))) : json(nullptr);
  return j;
}

void require_path(std::vector<std::string>& issues, const fs::path& p, const std::string& key, bool dir) {
  if (p.empty()) {
    issues.push_back(key + ": required path is not set");
  } else if (!fs::exists(p)) {
    issues.push_back(key + ": path does not exist: " + p.string());
  } else if (dir && !fs::is_directory(p)) {
    issues.push_back(key + ": not a directory: " + p.string());
  } else if (!dir && fs::is_directory(p)) {
    issues.push_back(key + ": expected a file, found a directory: " + p.string());
  }
}

void check_dataset(std::vector<std::string>& issues, const DatasetConfig& d, const std::string& key,
                   bool needs_masks) {
  try {
    d.spec.validate();
  } catch (const Error& e) {
    issues.push_back(key + ".spec: " + e.what());
  }
  require_path(issues, d.image_dir, key + ".image_dir", true);
  if (d.kind == DatasetKind::Table) {
    require_path(issues, d.annotations, key + ".annotations", false);
  } else {
    require_path(issues, d.bbox_file, key + ".bbox_file", false);
    require_path(issues, d.curation_list, key + ".curation_list", false);
  }
  if (needs_masks || d.in_lung_only || !d.lung_mask_dir.empty()) {
    require_path(issues, d.lung_mask_dir, key + ".lung_mask_dir", true);
  }
  if (!d.exclusions.empty()) require_path(issues, d.exclusions, key + ".exclusions", false);
}

bool is_segmented(Variant v) { return v == Variant::Segmented || v == Variant::EqualizedSegmented; }

}  // namespace

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, path.string() + ": " + e.what());
  }
  ExperimentConfig cfg = from_json(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
  cfg.source = path;
  return cfg;
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base) {
  if (!j.is_object()) fail("config root must be an object");
  static const std::set<std::string> known{"name",    "output_root", "seed",  "desk_scale", "folds",
                                           "dataset", "variants",    "depths", "resolutions", "model",
                                           "preprocess", "train",    "rater", "sweep",      "report",
                                           "external"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) spdlog::warn("config: ignoring unknown key '{}'", k);
  }
  ExperimentConfig c;
  c.raw = j;
  c.name = get<std::string>(j, "name", c.name, "config");
  c.output_root = resolve(j, "output_root", "config", base);
  if (c.output_root.empty()) c.output_root = (base / "runs").lexically_normal();
  if (const char* env = std::getenv("LNSEG_OUTPUT_ROOT"); env && *env) c.output_root = env;
  c.seed = get<std::uint64_t>(j, "seed", c.seed, "config");
  c.desk_scale = get<bool>(j, "desk_scale", c.desk_scale, "config");
  c.folds = get<int>(j, "folds", c.folds, "config");
  if (!j.contains("dataset")) fail("config.dataset is required");
  c.dataset = parse_dataset(j.at("dataset"), "dataset", base);

  if (j.contains("variants")) {
    c.variants.clear();
    for (const auto& v : j.at("variants")) {
      if (!v.is_string()) fail("variants must be strings");
      const auto parsed = parse_variant(v.get<std::string>());
      if (!parsed) fail("variants: unknown value '" + v.get<std::string>() + "'");
      c.variants.push_back(*parsed);
    }
  }
  c.depths = get<std::vector<int>>(j, "depths", c.depths, "config");
  c.resolutions = get<std::vector<int>>(j, "resolutions", c.resolutions, "config");

  const json model = j.value("model", json::object());
  c.norm = get_enum(model, "norm", c.norm, "model", [](const std::string& t) { return nn::parse_norm_mode(t); });
  c.base_filters = get<int>(model, "base_filters", c.base_filters, "model");

  const json pre = j.value("preprocess", json::object());
  c.equalize_bins = get<int>(pre, "equalize_bins", c.equalize_bins, "preprocess");
  c.resample_filter = get_enum(pre, "resample_filter", c.resample_filter, "preprocess",
                               [](const std::string& t) { return parse_resample_filter(t); });

  const json tr = j.value("train", json::object());
  c.train.learning_rate = get<double>(tr, "learning_rate", c.train.learning_rate, "train");
  c.train.max_epochs = get<int>(tr, "max_epochs", c.train.max_epochs, "train");
  c.train.batch_size = get<int>(tr, "batch_size", c.train.batch_size, "train");
  c.train.loss = get_enum(tr, "loss", c.train.loss, "train", [](const std::string& t) { return parse_loss(t); });
  c.train.optimizer = get_enum(tr, "optimizer", c.train.optimizer, "train",
                               [](const std::string& t) { return parse_optimizer(t); });
  c.train.val_fraction = get<double>(tr, "val_fraction", c.train.val_fraction, "train");
  c.train.seed = c.seed;

  const json ra = j.value("rater", json::object());
  c.rater.eccentricity_max = get<double>(ra, "eccentricity_max", c.rater.eccentricity_max, "rater");
  c.rater.area_divisor = get<int>(ra, "area_divisor", c.rater.area_divisor, "rater");
  c.rater.roi_intensity_min = get<double>(ra, "roi_intensity_min", c.rater.roi_intensity_min, "rater");
  c.rater.centroid_tol_divisor = get<int>(ra, "centroid_tol_divisor", c.rater.centroid_tol_divisor, "rater");
  c.rater.binarize_threshold = get<double>(ra, "binarize_threshold", c.rater.binarize_threshold, "rater");
  c.rater.roi_shape = get_enum(ra, "roi_shape", c.rater.roi_shape, "rater",
                               [](const std::string& t) { return parse_roi_shape(t); });

  const json sw = j.value("sweep", json::object());
  c.sweep_enabled = get<bool>(sw, "enabled", c.sweep_enabled, "sweep");
  c.sweep.kernel_min = get<int>(sw, "kernel_min", c.sweep.kernel_min, "sweep");
  c.sweep.kernel_max = get<int>(sw, "kernel_max", c.sweep.kernel_max, "sweep");
  c.sweep.kernel_step = get<int>(sw, "kernel_step", c.sweep.kernel_step, "sweep");
  if (sw.contains("kernel_shape") && get<std::string>(sw, "kernel_shape", "", "sweep") != "ellipse") {
    fail("sweep.kernel_shape: only 'ellipse' is supported");
  }

  const json rep = j.value("report", json::object());
  if (rep.contains("stratifiers")) {
    c.stratifiers.clear();
    for (const auto& s : rep.at("stratifiers")) {
      const auto parsed = parse_stratifier(s.is_string() ? s.get<std::string>() : "");
      if (!parsed) fail("report.stratifiers: unknown value " + s.dump());
      c.stratifiers.push_back(*parsed);
    }
  }

  if (j.contains("external") && !j.at("external").is_null()) {
    const json& ex = j.at("external");
    ExternalConfig e;
    if (!ex.contains("dataset")) fail("external.dataset is required");
    e.dataset = parse_dataset(ex.at("dataset"), "external.dataset", base);
    e.depth = get<int>(ex, "depth", e.depth, "external");
    e.resolution = get<int>(ex, "resolution", e.resolution, "external");
    e.variant = get_enum(ex, "variant", e.variant, "external",
                         [](const std::string& t) { return parse_variant(t); });
    c.external = e;
  }
  return c;
}

std::vector<std::string> ExperimentConfig::validate() const {
  std::vector<std::string> issues;
  if (variants.empty()) issues.push_back("variants: grid axis is empty");
  if (depths.empty()) issues.push_back("depths: grid axis is empty");
  if (resolutions.empty()) issues.push_back("resolutions: grid axis is empty");
  if (folds < 2) issues.push_back("folds: need at least 2, got " + std::to_string(folds));
  if (base_filters < 1) issues.push_back("model.base_filters: must be positive");
  for (int d : depths) {
    if (d < 2 || d > 8) issues.push_back("depths: " + std::to_string(d) + " is outside [2, 8]");
  }
  for (int r : resolutions) {
    if (!is_standard_dim(r) && !(desk_scale && is_power_of_two(r) && r >= 16)) {
      issues.push_back("resolutions: " + std::to_string(r) +
                       (desk_scale ? " is not a power of two >= 16" : " is not one of 512, 1024, 2048"));
      continue;
    }
    for (int d : depths) {
      if (d >= 2 && d <= 8 && r % (1 << (d - 1)) != 0) {
        issues.push_back("resolution " + std::to_string(r) + " is not divisible by 2^(depth-1) for depth " +
                         std::to_string(d));
      }
    }
  }
  auto collect = [&](const char* key, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      issues.push_back(std::string(key) + ": " + e.what());
    }
  };
  collect("train", [&] { train.validate(); });
  collect("rater", [&] { rater.validate(); });
  collect("sweep", [&] { sweep.validate(); });
  if (equalize_bins < 2) issues.push_back("preprocess.equalize_bins: must be >= 2");

  bool seg = false;
  for (Variant v : variants) seg = seg || is_segmented(v);
  check_dataset(issues, dataset, "dataset", seg);
  if (external) {
    check_dataset(issues, external->dataset, "external.dataset", is_segmented(external->variant));
    if (std::find(depths.begin(), depths.end(), external->depth) == depths.end()) {
      issues.push_back("external.depth: " + std::to_string(external->depth) + " is not in the trained grid");
    }
    const int r = external->resolution;
    if (!is_standard_dim(r) && !(desk_scale && is_power_of_two(r) && r >= 16)) {
      issues.push_back("external.resolution: " + std::to_string(r) + " is not supported");
    }
  }
  return issues;
}

nn::ModelSpec ExperimentConfig::model_spec(int depth, int resolution) const {
  return nn::ModelSpec::scaled(depth, resolution, base_filters, norm);
}

PreprocessConfig ExperimentConfig::preprocess_config(Variant v, int resolution) const {
  PreprocessConfig p = PreprocessConfig::for_variant(v, resolution);
  p.equalize_bins = equalize_bins;
  p.resample_filter = resample_filter;
  return p;
}

MatrixGrid ExperimentConfig::grid() const { return {depths, resolutions, variants, folds}; }

json to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["desk_scale"] = c.desk_scale;
  j["folds"] = c.folds;
  j["dataset"] = dataset_json(c.dataset);
  j["variants"] = json::array();
  for (Variant v : c.variants) j["variants"].push_back(std::string(to_string(v)));
  j["depths"] = c.depths;
  j["resolutions"] = c.resolutions;
  j["model"] = {{"norm", std::string(nn::to_string(c.norm))}, {"base_filters", c.base_filters}};
  j["preprocess"] = {{"equalize_bins", c.equalize_bins},
                     {"resample_filter", std::string(to_string(c.resample_filter))}};
  j["train"] = {{"learning_rate", c.train.learning_rate}, {"max_epochs", c.train.max_epochs},
                {"batch_size", c.train.batch_size},       {"loss", std::string(to_string(c.train.loss))},
                {"optimizer", std::string(to_string(c.train.optimizer))},
                {"val_fraction", c.train.val_fraction}};
  j["rater"] = {{"eccentricity_max", c.rater.eccentricity_max},
                {"area_divisor", c.rater.area_divisor},
                {"roi_intensity_min", c.rater.roi_intensity_min},
                {"centroid_tol_divisor", c.rater.centroid_tol_divisor},
                {"binarize_threshold", c.rater.binarize_threshold},
                {"roi_shape", std::string(to_string(c.rater.roi_shape))}};
  j["sweep"] = {{"enabled", c.sweep_enabled},
                {"kernel_min", c.sweep.kernel_min},
                {"kernel_max", c.sweep.kernel_max},
                {"kernel_step", c.sweep.kernel_step},
                {"kernel_shape", "ellipse"}};
  j["report"]["stratifiers"] = json::array();
  for (Stratifier s : c.stratifiers) j["report"]["stratifiers"].push_back(std::string(to_string(s)));
  if (c.external) {
    j["external"] = {{"dataset", dataset_json(c.external->dataset)},
                     {"depth", c.external->depth},
                     {"resolution", c.external->resolution},
                     {"variant", std::string(to_string(c.external->variant))}};
  }
  return j;
}

std::string ExperimentConfig::hash() const { return content_hash(to_json(*this).dump()); }

}  // namespace lnseg
