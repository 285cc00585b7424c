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

#include "lnseg/pipeline.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "lnseg/ensemble.hpp"
#include "lnseg/error.hpp"
#include "lnseg/fpsweep.hpp"
#include "lnseg/hash.hpp"
#include "lnseg/png_io.hpp"
#include "lnseg/preprocess.hpp"

namespace lnseg {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::Preprocess: return "preprocess";
    case Stage::Train: return "train";
    case Stage::Ensemble: return "ensemble";
    case Stage::Rate: return "rate";
    case Stage::Sweep: return "sweep";
    case Stage::Report: return "report";
    case Stage::All: return "all";
  }
  return "all";
}

std::optional<Stage> parse_stage(std::string_view text) {
  for (Stage s : {Stage::Ingest, Stage::Preprocess, Stage::Train, Stage::Ensemble, Stage::Rate, Stage::Sweep,
                  Stage::Report, Stage::All}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

// ------------------------------------------------------------ helpers

namespace {

json annotation_json(const NoduleAnnotation& a) {
  json j = {{"image_id", a.image_id},
            {"center_x", a.center_x},
            {"center_y", a.center_y},
            {"diameter_px", a.diameter_px},
            {"subtlety", std::string(to_string(a.subtlety))},
            {"malignancy", std::string(to_string(a.malignancy))},
            {"side", std::string(to_string(a.side))},
            {"lobe", std::string(to_string(a.lobe))},
            {"diagnosis", a.diagnosis},
            {"sex", std::string(to_string(a.sex))}};
  j["age"] = a.age ? json(*a.age) : json(nullptr);
  return j;
}

NoduleAnnotation annotation_from_json(const json& j) {
  NoduleAnnotation a;
  a.image_id = j.at("image_id");
  a.center_x = j.at("center_x");
  a.center_y = j.at("center_y");
  a.diameter_px = j.at("diameter_px");
  a.subtlety = parse_subtlety(j.at("subtlety").get<std::string>());
  a.malignancy = parse_malignancy(j.at("malignancy").get<std::string>());
  a.side = parse_side(j.at("side").get<std::string>());
  a.lobe = parse_lobe(j.at("lobe").get<std::string>());
  a.diagnosis = j.at("diagnosis");
  a.sex = parse_sex(j.at("sex").get<std::string>());
  if (!j.at("age").is_null()) a.age = j.at("age").get<int>();
  return a;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedFile, path.string() + ": " + e.what());
  }
}

// Writes via a temporary file so a killed run never leaves half a file.
void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(Errc::IoError, "cannot write " + tmp.string());
    out << text;
    if (!out) throw Error(Errc::IoError, "failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string read_stamp(const fs::path& path) {
  if (!fs::exists(path)) return {};
  try {
    return read_json(path).value("hash", "");
  } catch (const Error&) {
    return {};
  }
}

void write_stamp(const fs::path& path, const std::string& hash, const Provenance& prov) {
  write_json(path, {{"hash", hash},
                    {"provenance",
                     {{"config_hash", prov.config_hash}, {"seed", prov.seed}, {"code_version", prov.code_version}}}});
}

void require(const fs::path& path, const std::string& stage, const std::string& what) {
  if (!fs::exists(path)) {
    throw Error(Errc::StageDependencyError,
                "stage '" + stage + "' needs " + what + " at " + path.string() + "; run the upstream stage first");
  }
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return content_hash(ss.str());
}

std::string fold_dir(int fold) { return fmt::format("fold_{:02d}", fold); }

std::string prep_name(Variant v, int res) { return std::string(to_string(v)) + "_" + std::to_string(res); }

std::vector<std::string> annotated_ids(const std::vector<ImageRecord>& records) {
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.image_id);
  return ids;
}

struct PreparedSet {
  std::map<std::string, NoduleAnnotation> annotations;
  std::map<std::string, bool> interpolated;
  fs::path images;
};

PreparedSet read_prepared(const fs::path& dir) {
  PreparedSet p;
  p.images = dir / "images";
  const json j = read_json(dir / "annotations.json");
  for (const auto& e : j.at("records")) {
    const std::string id = e.at("image_id");
    if (!e.at("annotation").is_null()) p.annotations[id] = annotation_from_json(e.at("annotation"));
    p.interpolated[id] = e.value("interpolated", false);
  }
  return p;
}

}  // namespace

std::set<std::string> read_id_list(const fs::path& path) {
  std::set<std::string> ids;
  if (path.empty() || !fs::exists(path)) return ids;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    line = line.substr(0, line.find('#'));
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    std::string id = line.substr(b, e - b + 1);
    if (auto dot = id.rfind('.'); dot != std::string::npos) id.resize(dot);
    ids.insert(id);
  }
  return ids;
}

std::vector<ImageRecord> load_dataset(const DatasetConfig& cfg, bool load_pixels) {
  std::vector<NoduleAnnotation> anns;
  if (cfg.kind == DatasetKind::Table) {
    anns = parse_annotations(cfg.annotations, cfg.spec, {cfg.delimiter});
  } else {
    const auto rows = select_label(parse_bbox_file(cfg.bbox_file), "Nodule");
    const auto curated = load_curation_list(cfg.curation_list);
    for (auto& n : make_nih_masks(rows, curated, cfg.spec.native_dim, cfg.spec.native_dim)) {
      anns.push_back(std::move(n.annotation));
    }
  }
  const auto excluded = read_id_list(cfg.exclusions);
  std::vector<ImageRecord> records;
  for (const auto& a : anns) {
    if (excluded.count(a.image_id)) continue;
    ImageRecord r;
    if (load_pixels) {
      r = load_image(cfg.image_path(a.image_id), cfg.spec);
    } else if (!fs::exists(cfg.image_path(a.image_id))) {
      throw Error(Errc::IoError, "missing image " + cfg.image_path(a.image_id).string());
    }
    r.image_id = a.image_id;
    r.dim = cfg.spec.native_dim;
    r.annotation = a;
    if (!cfg.lung_mask_dir.empty()) r.lung_mask = load_lung_mask(cfg.lung_mask_path(a.image_id), r.dim);
    records.push_back(std::move(r));
  }
  if (cfg.in_lung_only) records = make_jsrt_a(std::move(records));
  if (cfg.category) records = filter_by_category(records, SubtletyCategory::of(*cfg.category));
  return records;
}

std::string ValidationReport::text() const {
  std::ostringstream out;
  out << "experiments: " << experiments.size() << "\n";
  for (const auto& e : experiments) out << "  " << e << "\n";
  out << "training cells: " << training_cells << "\n";
  out << "annotated images: " << annotated_images << "\n";
  out << "positive images: " << positive_images << "\n";
  if (external_images) out << "external images: " << *external_images << "\n";
  if (issues.empty()) {
    out << "status: valid\n";
  } else {
    out << "status: invalid (" << issues.size() << " problem" << (issues.size() == 1 ? "" : "s") << ")\n";
    for (const auto& i : issues) out << "  - " << i << "\n";
  }
  return out.str();
}

ValidationReport validate_experiment(const ExperimentConfig& cfg) {
  ValidationReport rep;
  rep.issues = cfg.validate();
  for (int d : cfg.depths)
    for (int r : cfg.resolutions)
      for (Variant v : cfg.variants) rep.experiments.push_back(CellKey{d, r, v, 0}.experiment());
  rep.training_cells = static_cast<int>(rep.experiments.size()) * cfg.folds;
  if (!rep.ok()) return rep;
  try {
    if (cfg.dataset.kind == DatasetKind::Table) {
      rep.annotated_images =
          static_cast<int>(parse_annotations(cfg.dataset.annotations, cfg.dataset.spec, {cfg.dataset.delimiter}).size());
    }
    const auto records = load_dataset(cfg.dataset, false);
    rep.positive_images = static_cast<int>(records.size());
    if (cfg.dataset.kind == DatasetKind::BBox) rep.annotated_images = rep.positive_images;
    if (rep.positive_images < cfg.folds) {
      rep.issues.push_back("dataset: " + std::to_string(rep.positive_images) + " images cannot fill " +
                           std::to_string(cfg.folds) + " folds");
    }
    if (cfg.external) rep.external_images = static_cast<int>(load_dataset(cfg.external->dataset, false).size());
  } catch (const Error& e) {
    rep.issues.push_back(e.what());
  }
  return rep;
}

// ------------------------------------------------------------ pipeline

Pipeline::Pipeline(ExperimentConfig cfg, RunOptions opts) : cfg_(std::move(cfg)), opts_(opts) {
  if (opts_.devices > 1) {
    spdlog::info("{} devices requested; this build trains on the CPU, one cell at a time", opts_.devices);
  }
}

fs::path Pipeline::manifest_path() const { return root() / "models" / "manifest.json"; }

std::vector<std::string> Pipeline::experiments() const {
  std::vector<std::string> out;
  for (int d : cfg_.depths)
    for (int r : cfg_.resolutions)
      for (Variant v : cfg_.variants) out.push_back(CellKey{d, r, v, 0}.experiment());
  return out;
}

Provenance Pipeline::provenance() const { return {cfg_.hash(), cfg_.seed, std::string(code_version())}; }

StageSummary Pipeline::run(Stage stage) {
  spdlog::info("stage {}", to_string(stage));
  switch (stage) {
    case Stage::Ingest: return ingest();
    case Stage::Preprocess: return preprocess();
    case Stage::Train: return train();
    case Stage::Ensemble: return ensemble();
    case Stage::Rate: return rate();
    case Stage::Sweep: return sweep();
    case Stage::Report: return report();
    case Stage::All: break;
  }
  StageSummary total;
  for (Stage s : {Stage::Ingest, Stage::Preprocess, Stage::Train, Stage::Ensemble, Stage::Rate, Stage::Sweep,
                  Stage::Report}) {
    const StageSummary part = run(s);
    total.work_done += part.work_done;
    total.skipped += part.skipped;
    total.errors.insert(total.errors.end(), part.errors.begin(), part.errors.end());
  }
  return total;
}

StageSummary Pipeline::ingest() {
  StageSummary sum;
  const DatasetConfig& ds = cfg_.dataset;
  const auto records = load_dataset(ds, false);
  if (records.empty()) throw Error(Errc::EmptySet, "dataset has no annotated images after filtering");

  json dataset = json::object();
  dataset["spec"] = to_json(cfg_)["dataset"];
  dataset["records"] = json::array();
  std::string digest = dataset["spec"].dump() + std::to_string(cfg_.seed) + "/" + std::to_string(cfg_.folds);
  digest += file_digest(ds.kind == DatasetKind::Table ? ds.annotations : ds.bbox_file);
  for (const auto& r : records) {
    const fs::path img = ds.image_path(r.image_id);
    json e = {{"image_id", r.image_id}, {"image", img.generic_string()}, {"annotation", annotation_json(*r.annotation)}};
    e["lung_mask"] = ds.lung_mask_dir.empty() ? json(nullptr) : json(ds.lung_mask_path(r.image_id).generic_string());
    digest += r.image_id + ":" + std::to_string(fs::file_size(img));
    if (!ds.lung_mask_dir.empty()) digest += ":" + std::to_string(fs::file_size(ds.lung_mask_path(r.image_id)));
    dataset["records"].push_back(std::move(e));
  }
  const std::string hash = content_hash(digest);
  const fs::path dir = root() / "ingest";
  if (opts_.resume && read_stamp(dir / "stamp.json") == hash && fs::exists(dir / "dataset.json") &&
      fs::exists(dir / "folds.json")) {
    sum.skipped = 1;
    return sum;
  }
  const FoldPlan plan = make_folds(annotated_ids(records), cfg_.folds, cfg_.seed);
  json folds = {{"seed", plan.seed}, {"k", plan.k}, {"assignments", plan.assignments}};
  write_json(dir / "dataset.json", dataset);
  write_json(dir / "folds.json", folds);
  write_stamp(dir / "stamp.json", hash, provenance());
  sum.work_done = static_cast<int>(records.size());
  spdlog::info("ingested {} images into {} folds", records.size(), plan.k);
  return sum;
}

namespace {

FoldPlan read_folds(const fs::path& path) {
  const json j = read_json(path);
  FoldPlan p;
  p.seed = j.at("seed");
  p.k = j.at("k");
  p.assignments = j.at("assignments").get<std::map<std::string, int>>();
  return p;
}

}  // namespace

StageSummary Pipeline::preprocess() {
  StageSummary sum;
  const fs::path ingest_dir = root() / "ingest";
  require(ingest_dir / "dataset.json", "preprocess", "the ingested dataset");
  const std::string ingest_hash = read_stamp(ingest_dir / "stamp.json");
  const json dataset = read_json(ingest_dir / "dataset.json");

  for (Variant v : cfg_.variants) {
    for (int res : cfg_.resolutions) {
      const PreprocessConfig pc = cfg_.preprocess_config(v, res);
      const std::string hash = content_hash(
          ingest_hash + fmt::format("|{}|{}|{}|{}|{}", pc.equalize, pc.segment_lung, pc.target_dim,
                                    pc.equalize_bins, to_string(pc.resample_filter)));
      const fs::path dir = root() / "preprocessed" / prep_name(v, res);
      if (opts_.resume && read_stamp(dir / "stamp.json") == hash && fs::exists(dir / "annotations.json")) {
        ++sum.skipped;
        continue;
      }
      fs::create_directories(dir / "images");
      json out = {{"variant", std::string(to_string(v))}, {"resolution", res}, {"records", json::array()}};
      for (const auto& e : dataset.at("records")) {
        ImageRecord rec = load_image(e.at("image").get<std::string>(), cfg_.dataset.spec);
        rec.image_id = e.at("image_id");
        rec.annotation = annotation_from_json(e.at("annotation"));
        if (!e.at("lung_mask").is_null()) rec.lung_mask = load_lung_mask(e.at("lung_mask").get<std::string>(), rec.dim);
        const ImageRecord p = run_pipeline(rec, pc);
        png::write_gray16(dir / "images" / (p.image_id + ".png"), p.pixels);
        out["records"].push_back(
            {{"image_id", p.image_id}, {"annotation", annotation_json(*p.annotation)}, {"interpolated", p.interpolated}});
        ++sum.work_done;
      }
      write_json(dir / "annotations.json", out);
      write_stamp(dir / "stamp.json", hash, provenance());
      spdlog::info("preprocessed {}", prep_name(v, res));
    }
  }
  return sum;
}

namespace {

std::vector<TrainingSample> load_samples(const fs::path& dir) {
  const PreparedSet prepared = read_prepared(dir);
  std::vector<TrainingSample> samples;
  for (const auto& [id, ann] : prepared.annotations) {
    ImageRecord r;
    r.image_id = id;
    r.pixels = png::read_unit(prepared.images / (id + ".png"));
    r.dim = static_cast<int>(r.pixels.rows());
    r.annotation = ann;
    samples.push_back(make_training_sample(r));
  }
  return samples;
}

}  // namespace

StageSummary Pipeline::train() {
  StageSummary sum;
  const fs::path folds_path = root() / "ingest" / "folds.json";
  require(folds_path, "train", "the fold plan");
  for (Variant v : cfg_.variants)
    for (int res : cfg_.resolutions)
      require(root() / "preprocessed" / prep_name(v, res) / "annotations.json", "train",
              "preprocessed images for " + prep_name(v, res));
  const FoldPlan plan = read_folds(folds_path);

  json train_json = to_json(cfg_)["train"];
  const auto hasher = [&](const CellKey& key) {
    const nn::ModelSpec spec = cfg_.model_spec(key.depth, key.resolution);
    const std::string prep = read_stamp(root() / "preprocessed" / prep_name(key.variant, key.resolution) / "stamp.json");
    return content_hash(fmt::format("{}|{}|{}|{}|{}|{}|{}", prep, spec.name(), fmt::join(spec.filters, ","),
                                    nn::to_string(spec.norm_mode), train_json.dump(), cfg_.seed, key.fold));
  };

  std::string cached_name;
  std::vector<TrainingSample> cached;
  const auto runner = [&](const CellKey& key) {
    const std::string name = prep_name(key.variant, key.resolution);
    if (name != cached_name) {
      cached.clear();
      cached = load_samples(root() / "preprocessed" / name);
      cached_name = name;
    }
    const nn::ModelSpec spec = cfg_.model_spec(key.depth, key.resolution);
    spdlog::info("training {}", key.id());
    const FoldResult fr = train_fold(spec, cached, plan, key.fold, cfg_.train, root() / "models" / key.id());
    CellRecord rec;
    rec.key = key;
    rec.seed = cfg_.seed;
    for (const auto& p : fr.checkpoints) rec.checkpoints.push_back(p.generic_string());
    rec.metrics = fr.metrics;
    rec.selected_epoch = select_optimal_epoch(fr.metrics);
    rec.train_ids = fr.split.train;
    rec.validation_ids = fr.split.validation;
    rec.test_ids = fr.split.test;
    return rec;
  };

  MatrixOutcome outcome = run_matrix(cfg_.grid(), hasher, runner, manifest_path(), opts_.resume);
  sum.work_done = outcome.trained;
  sum.skipped = outcome.skipped;
  sum.errors = outcome.errors;
  if (!outcome.errors.empty()) {
    std::string msg = std::to_string(outcome.errors.size()) + " training cell(s) failed:";
    for (const auto& e : outcome.errors) msg += "\n  " + e;
    throw Error(Errc::PartialFailure, msg);
  }
  return sum;
}

namespace {

std::string ensemble_hash(const CellRecord& c) { return content_hash(c.hash + "|n=" + std::to_string(c.selected_epoch)); }

std::vector<const CellRecord*> experiment_cells(const Manifest& m, const CellKey& exp, int folds) {
  std::vector<const CellRecord*> out;
  for (int f = 0; f < folds; ++f) {
    CellKey k = exp;
    k.fold = f;
    out.push_back(m.find(k));
  }
  return out;
}

}  // namespace

StageSummary Pipeline::ensemble() {
  StageSummary sum;
  require(manifest_path(), "ensemble", "the training manifest");
  const Manifest manifest = Manifest::load(manifest_path());
  for (const CellKey& key : cfg_.grid().cells()) {
    const CellRecord* cell = manifest.find(key);
    if (!cell || !cell->complete) {
      sum.errors.push_back(key.id() + ": no trained model in the manifest");
      continue;
    }
    const fs::path dir = root() / "composites" / key.id();
    const std::string hash = ensemble_hash(*cell);
    if (opts_.resume && read_stamp(dir / "stamp.json") == hash) {
      ++sum.skipped;
      continue;
    }
    const PreparedSet prepared = read_prepared(root() / "preprocessed" / prep_name(key.variant, key.resolution));
    std::vector<ImageF> images;
    for (const auto& id : cell->test_ids) images.push_back(png::read_unit(prepared.images / (id + ".png")));
    std::vector<fs::path> ckpts(cell->checkpoints.begin(), cell->checkpoints.end());
    const auto composites =
        ensemble_predict(cfg_.model_spec(key.depth, key.resolution), ckpts, cell->selected_epoch, images);
    for (std::size_t i = 0; i < composites.size(); ++i) {
      write_composite(dir / (cell->test_ids[i] + ".png"), composites[i]);
    }
    write_stamp(dir / "stamp.json", hash, provenance());
    sum.work_done += static_cast<int>(composites.size());
    spdlog::info("ensembled {} (n = {})", key.id(), cell->selected_epoch);
  }
  if (!sum.errors.empty()) {
    std::string msg = std::to_string(sum.errors.size()) + " ensemble cell(s) failed:";
    for (const auto& e : sum.errors) msg += "\n  " + e;
    throw Error(Errc::PartialFailure, msg);
  }
  return sum;
}

namespace {

struct ExperimentInputs {
  CellKey key;  // fold 0
  std::vector<const CellRecord*> cells;
  std::string stamp;  // combined composite stamps
};

}  // namespace

StageSummary Pipeline::rate() {
  StageSummary sum;
  require(manifest_path(), "rate", "the training manifest");
  const Manifest manifest = Manifest::load(manifest_path());
  const json rater_json = to_json(cfg_)["rater"];
  for (int d : cfg_.depths)
    for (int res : cfg_.resolutions)
      for (Variant v : cfg_.variants) {
        const CellKey exp{d, res, v, 0};
        std::string digest = rater_json.dump();
        for (int f = 0; f < cfg_.folds; ++f) {
          const CellKey k{d, res, v, f};
          const fs::path stamp = root() / "composites" / k.id() / "stamp.json";
          require(stamp, "rate", "ensemble outputs for " + k.id());
          digest += read_stamp(stamp);
        }
        const std::string hash = content_hash(digest);
        const fs::path dir = root() / "ratings" / exp.experiment();
        if (opts_.resume && read_stamp(dir / "stamp.json") == hash && fs::exists(dir / "results.json")) {
          ++sum.skipped;
          continue;
        }
        const PreparedSet prepared = read_prepared(root() / "preprocessed" / prep_name(v, res));
        std::vector<RatingResult> results;
        json rows = json::array();
        for (int f = 0; f < cfg_.folds; ++f) {
          const CellKey k{d, res, v, f};
          const CellRecord* cell = manifest.find(k);
          if (!cell) throw Error(Errc::StageDependencyError, "manifest has no entry for " + k.id());
          for (const auto& id : cell->test_ids) {
            const ImageF composite = read_composite(root() / "composites" / k.id() / (id + ".png"));
            std::optional<NoduleAnnotation> gt;
            if (auto it = prepared.annotations.find(id); it != prepared.annotations.end()) gt = it->second;
            RatingResult r = rate_image(id, composite, gt, cfg_.rater);
            rows.push_back({{"image_id", id}, {"fold", f}, {"tp", r.tp}, {"fp", r.fp}, {"filtered", r.filtered()}});
            results.push_back(std::move(r));
            ++sum.work_done;
          }
        }
        write_ratings_csv(dir / "ratings.csv", results);
        write_json(dir / "results.json", {{"experiment", exp.experiment()}, {"results", rows}});
        write_stamp(dir / "stamp.json", hash, provenance());
        const Aggregate a = aggregate(results);
        spdlog::info("rated {}: sensitivity {:.1f}% at {:.2f} FP/image", exp.experiment(), a.sensitivity,
                     a.fp_per_image);
      }
  return sum;
}

StageSummary Pipeline::sweep() {
  StageSummary sum;
  if (!cfg_.sweep_enabled) return sum;
  require(manifest_path(), "sweep", "the training manifest");
  const Manifest manifest = Manifest::load(manifest_path());
  const json j = to_json(cfg_);
  for (int d : cfg_.depths)
    for (int res : cfg_.resolutions)
      for (Variant v : cfg_.variants) {
        const CellKey exp{d, res, v, 0};
        std::string digest = j["rater"].dump() + j["sweep"].dump();
        for (int f = 0; f < cfg_.folds; ++f) {
          const CellKey k{d, res, v, f};
          const fs::path stamp = root() / "composites" / k.id() / "stamp.json";
          require(stamp, "sweep", "ensemble outputs for " + k.id());
          digest += read_stamp(stamp);
        }
        const std::string hash = content_hash(digest);
        const fs::path dir = root() / "sweeps" / exp.experiment();
        if (opts_.resume && read_stamp(dir / "stamp.json") == hash && fs::exists(dir / "roc.csv")) {
          ++sum.skipped;
          continue;
        }
        const PreparedSet prepared = read_prepared(root() / "preprocessed" / prep_name(v, res));
        std::vector<SweepItem> items;
        for (int f = 0; f < cfg_.folds; ++f) {
          const CellKey k{d, res, v, f};
          const CellRecord* cell = manifest.find(k);
          if (!cell) throw Error(Errc::StageDependencyError, "manifest has no entry for " + k.id());
          for (const auto& id : cell->test_ids) {
            SweepItem item;
            item.image_id = id;
            item.composite = read_composite(root() / "composites" / k.id() / (id + ".png"));
            if (auto it = prepared.annotations.find(id); it != prepared.annotations.end()) item.annotation = it->second;
            items.push_back(std::move(item));
          }
        }
        const auto points = lnseg::sweep(items, cfg_.sweep, cfg_.rater);
        write_roc_csv(dir / "roc.csv", points);
        write_stamp(dir / "stamp.json", hash, provenance());
        sum.work_done += static_cast<int>(points.size());
        spdlog::info("swept {} over {} kernels", exp.experiment(), points.size());
      }
  return sum;
}

namespace {

std::vector<StratifiedTable> stratified_tables(const std::vector<std::vector<RatingResult>>& per_fold,
                                               const std::map<std::string, NoduleAnnotation>& annotations,
                                               const std::vector<Stratifier>& stratifiers) {
  std::vector<StratifiedTable> tables;
  for (Stratifier s : stratifiers) {
    std::vector<StratifiedTable> folds;
    for (const auto& results : per_fold) {
      if (!results.empty()) folds.push_back(stratify(results, annotations, s));
    }
    tables.push_back(pool_folds(folds));
  }
  return tables;
}

}  // namespace

StageSummary Pipeline::report() {
  StageSummary sum;
  require(manifest_path(), "report", "the training manifest");
  const Manifest manifest = Manifest::load(manifest_path());
  const Provenance prov = provenance();

  json index;
  index["schema_version"] = 1;
  index["provenance"] = {{"config_hash", prov.config_hash}, {"seed", prov.seed}, {"code_version", prov.code_version}};
  index["experiments"] = json::array();
  std::vector<std::pair<std::string, std::vector<RocPoint>>> curves;

  for (int d : cfg_.depths)
    for (int res : cfg_.resolutions)
      for (Variant v : cfg_.variants) {
        const CellKey exp{d, res, v, 0};
        const fs::path results_path = root() / "ratings" / exp.experiment() / "results.json";
        require(results_path, "report", "ratings for " + exp.experiment());
        const PreparedSet prepared = read_prepared(root() / "preprocessed" / prep_name(v, res));
        // Rebuild per-fold results from the stored tallies.
        std::vector<std::vector<RatingResult>> per_fold(cfg_.folds);
        std::vector<RatingResult> all;
        const json stored = read_json(results_path);
        for (const auto& row : stored.at("results")) {
          RatingResult r;
          r.image_id = row.at("image_id");
          r.tp = row.at("tp");
          r.fp = row.at("fp");
          per_fold.at(row.at("fold").get<int>()).push_back(r);
          all.push_back(r);
        }
        ReportBundle bundle;
        bundle.experiment = exp.experiment();
        bundle.provenance = prov;
        bundle.tables = stratified_tables(per_fold, prepared.annotations, cfg_.stratifiers);
        const fs::path roc = root() / "sweeps" / exp.experiment() / "roc.csv";
        if (cfg_.sweep_enabled && fs::exists(roc)) {
          bundle.roc = read_roc_csv(roc);
          curves.emplace_back(exp.experiment(), bundle.roc);
        }
        std::vector<std::string> cell_ids;
        std::vector<int> selected;
        for (const CellRecord* c : experiment_cells(manifest, exp, cfg_.folds)) {
          if (c) {
            cell_ids.push_back(c->key.id());
            selected.push_back(c->selected_epoch);
          }
        }
        bundle.cells = cell_ids;
        bundle.notes["selected_epochs"] = fmt::format("{}", fmt::join(selected, ","));
        bool interpolated = false;
        for (const auto& [id, flag] : prepared.interpolated) interpolated = interpolated || flag;
        bundle.notes["interpolated_input"] = interpolated ? "true" : "false";
        const auto files = emit(bundle, root() / "reports" / exp.experiment());
        sum.work_done += static_cast<int>(files.size());

        const Aggregate a = aggregate(all);
        index["experiments"].push_back({{"experiment", exp.experiment()},
                                        {"images", a.n},
                                        {"sensitivity", a.sensitivity},
                                        {"fp_per_image", a.fp_per_image},
                                        {"summary", exp.experiment() + "/summary.json"}});
      }
  index["cells"] = json::array();
  for (const auto& c : manifest.cells) {
    index["cells"].push_back({{"cell", c.key.id()}, {"complete", c.complete}, {"selected_epoch", c.selected_epoch},
                              {"hash", c.hash}});
  }
  write_json(root() / "reports" / "summary.json", index);
  if (!curves.empty()) write_roc_svg(root() / "reports" / "roc.svg", curves);
  sum.work_done += 1;
  return sum;
}

// ------------------------------------------------------------ external test

ExternalResult external_test(const ExperimentConfig& cfg, const fs::path& manifest_path) {
  if (!cfg.external) throw Error(Errc::ConfigError, "config has no 'external' section");
  const ExternalConfig& ext = *cfg.external;
  if (!fs::exists(manifest_path)) {
    throw Error(Errc::StageDependencyError, "external test needs the training manifest at " + manifest_path.string());
  }
  const Manifest manifest = Manifest::load(manifest_path);
  const CellKey exp{ext.depth, ext.resolution, ext.variant, 0};

  std::vector<const CellRecord*> cells;
  for (const auto& c : manifest.cells) {
    if (c.complete && c.key.depth == exp.depth && c.key.resolution == exp.resolution && c.key.variant == exp.variant) {
      cells.push_back(&c);
    }
  }
  if (cells.empty()) {
    throw Error(Errc::StageDependencyError, "manifest " + manifest_path.string() + " has no trained cells for " +
                                                exp.experiment());
  }

  const auto records = load_dataset(ext.dataset, true);
  if (records.empty()) throw Error(Errc::EmptySet, "external dataset has no images");

  ExternalResult result;
  result.experiment = exp.experiment();
  result.images = static_cast<int>(records.size());
  result.folds = static_cast<int>(cells.size());
  const PreprocessConfig pc = cfg.preprocess_config(ext.variant, ext.resolution);
  std::vector<ImageF> images;
  std::map<std::string, NoduleAnnotation> annotations;
  std::vector<std::string> ids;
  for (const auto& r : records) {
    const ImageRecord p = run_pipeline(r, pc);
    result.interpolated = result.interpolated || p.interpolated;
    images.push_back(p.pixels);
    annotations[p.image_id] = *p.annotation;
    ids.push_back(p.image_id);
  }
  if (result.interpolated) {
    spdlog::warn("external images were upsampled from {} to {}; results use interpolated input",
                 ext.dataset.spec.native_dim, ext.resolution);
  }

  result.out_dir = cfg.output_root / "external" / (exp.experiment() + "_" + ext.dataset.spec.name);
  std::vector<std::vector<RatingResult>> per_fold;
  std::vector<RatingResult> all;
  for (const CellRecord* c : cells) {
    std::vector<fs::path> ckpts(c->checkpoints.begin(), c->checkpoints.end());
    const auto composites =
        ensemble_predict(cfg.model_spec(ext.depth, ext.resolution), ckpts, c->selected_epoch, images);
    std::vector<RatingResult> fold_results;
    for (std::size_t i = 0; i < composites.size(); ++i) {
      fold_results.push_back(rate_image(ids[i], composites[i], annotations.at(ids[i]), cfg.rater));
    }
    write_ratings_csv(result.out_dir / fmt::format("ratings_{}.csv", fold_dir(c->key.fold)), fold_results);
    result.per_fold.push_back(aggregate(fold_results));
    all.insert(all.end(), fold_results.begin(), fold_results.end());
    per_fold.push_back(std::move(fold_results));
  }
  result.pooled = aggregate(all);
  result.tables = stratified_tables(per_fold, annotations, cfg.stratifiers);

  ReportBundle bundle;
  bundle.experiment = result.experiment + " external " + ext.dataset.spec.name;
  bundle.provenance = {cfg.hash(), cfg.seed, std::string(code_version())};
  bundle.tables = result.tables;
  for (const CellRecord* c : cells) bundle.cells.push_back(c->key.id());
  bundle.notes["interpolated_input"] = result.interpolated ? "true" : "false";
  bundle.notes["evaluations_per_image"] = std::to_string(result.folds);
  bundle.notes["images"] = std::to_string(result.images);
  emit(bundle, result.out_dir);
  return result;
}

}  // namespace lnseg
