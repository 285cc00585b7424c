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

#include "lnseg/synth.hpp"

#include <spdlog/fmt/fmt.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"
#include "lnseg/png_io.hpp"
#include "lnseg/rng.hpp"

namespace lnseg {

DatasetSpec synthetic_dataset_spec(int dim) {
  DatasetSpec s;
  s.name = "synthetic";
  s.native_dim = dim;
  s.pixel_spacing_mm = 1.0;
  s.raw_format = {Container::Png, 16, ByteOrder::Big, false};
  s.size_units = SizeUnits::Pixels;
  return s;
}

namespace {

struct Lung {
  double cx, cy, rx, ry;
  bool contains(double x, double y) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
};

constexpr Subtlety kSubtleties[] = {Subtlety::Obvious, Subtlety::RelativelyObvious, Subtlety::Subtle,
                                    Subtlety::VerySubtle, Subtlety::ExtremelySubtle};
const char* const kDiagnoses[] = {"Adenocarcinoma", "granuloma", "Hamartoma", " adenocarcinoma", "Metastasis"};

}  // namespace

std::vector<ImageRecord> make_synthetic_records(const SyntheticSpec& spec) {
  const int dim = spec.dim;
  const double d = dim;
  // Patient right appears on the image left.
  const Lung lungs[2] = {{0.30 * d, 0.50 * d, 0.17 * d, 0.34 * d}, {0.70 * d, 0.50 * d, 0.17 * d, 0.34 * d}};
  std::vector<ImageRecord> out;
  out.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i) {
    std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    ImageRecord rec;
    rec.image_id = fmt::format("SYN{:04d}", i + 1);
    rec.dim = dim;
    rec.pixels.resize(dim, dim);
    Mask lung = Mask::Zero(dim, dim);
    for (int y = 0; y < dim; ++y) {
      for (int x = 0; x < dim; ++x) {
        const bool in = lungs[0].contains(x, y) || lungs[1].contains(x, y);
        lung(y, x) = in ? 1 : 0;
        rec.pixels(y, x) = static_cast<float>((in ? spec.lung_level : spec.background) +
                                              spec.noise_sd * standard_normal(rng));
      }
    }
    const Lung& host = lungs[unit_uniform(rng) < 0.5 ? 0 : 1];
    const double radius = d * (spec.radius_min + (spec.radius_max - spec.radius_min) * unit_uniform(rng));
    // Uniform in the lung ellipse shrunk so the disk stays inside it.
    double cx = host.cx, cy = host.cy;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double u = 2 * unit_uniform(rng) - 1, v = 2 * unit_uniform(rng) - 1;
      if (u * u + v * v > 1) continue;
      cx = host.cx + u * std::max(host.rx - radius, 0.0);
      cy = host.cy + v * std::max(host.ry - radius, 0.0);
      break;
    }
    const int x0 = std::max(0, static_cast<int>(cx - radius - 4)), x1 = std::min(dim - 1, static_cast<int>(cx + radius + 4));
    const int y0 = std::max(0, static_cast<int>(cy - radius - 4)), y1 = std::min(dim - 1, static_cast<int>(cy + radius + 4));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double r = std::hypot(x - cx, y - cy);
        const double w = 1.0 / (1.0 + std::exp((r - radius) / spec.edge_softness));
        rec.pixels(y, x) += static_cast<float>(spec.amplitude * w);
      }
    }
    rec.pixels = rec.pixels.max(0.0f).min(1.0f);

    NoduleAnnotation ann;
    ann.image_id = rec.image_id;
    ann.center_x = cx;
    ann.center_y = cy;
    ann.diameter_px = 2 * radius;
    ann.subtlety = kSubtleties[i % 5];
    ann.malignancy = (i % 3 == 0) ? Malignancy::Benign : Malignancy::Malignant;
    ann.side = &host == &lungs[0] ? Side::Right : Side::Left;
    const double rel = (cy - (host.cy - host.ry)) / (2 * host.ry);
    ann.lobe = rel < 1.0 / 3 ? Lobe::Upper : (rel < 2.0 / 3 && ann.side == Side::Right ? Lobe::Middle : Lobe::Lower);
    ann.diagnosis = kDiagnoses[i % 5];
    ann.sex = (i % 2 == 0) ? Sex::Female : Sex::Male;
    ann.age = 40 + (i * 7) % 40;
    rec.annotation = ann;
    rec.lung_mask = std::move(lung);
    out.push_back(std::move(rec));
  }
  return out;
}

void write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "lung_masks");
  const auto records = make_synthetic_records(spec);
  std::vector<NoduleAnnotation> anns;
  for (const auto& r : records) {
    png::write_gray16(dir / "images" / (r.image_id + ".png"), r.pixels);
    png::write_mask(dir / "lung_masks" / (r.image_id + ".png"), *r.lung_mask);
    anns.push_back(*r.annotation);
  }
  const DatasetSpec ds = synthetic_dataset_spec(spec.dim);
  write_annotations(dir / "annotations.csv", anns, ds);

  nlohmann::json cfg;
  cfg["name"] = "synthetic";
  cfg["output_root"] = "runs";
  cfg["seed"] = spec.seed;
  cfg["desk_scale"] = true;
  cfg["folds"] = 5;
  cfg["dataset"] = {{"kind", "table"},
                    {"spec",
                     {{"name", ds.name},
                      {"native_dim", ds.native_dim},
                      {"pixel_spacing_mm", ds.pixel_spacing_mm},
                      {"container", "png"},
                      {"bit_depth", 16},
                      {"intensity_inverted", false},
                      {"size_units", "px"}}},
                    {"image_dir", "images"},
                    {"annotations", "annotations.csv"},
                    {"lung_mask_dir", "lung_masks"},
                    {"in_lung_only", true}};
  cfg["variants"] = {"raw", "he_seg"};
  cfg["depths"] = {3};
  cfg["resolutions"] = {spec.dim};
  cfg["model"] = {{"norm", "instance"}, {"base_filters", 4}};
  cfg["train"] = {{"learning_rate", 1e-3}, {"max_epochs", 3}, {"batch_size", 4}};
  cfg["sweep"] = {{"kernel_min", 1}, {"kernel_max", 7}, {"kernel_step", 3}};
  std::ofstream(dir / "config.json") << cfg.dump(2) << '\n';
}

}  // namespace lnseg
