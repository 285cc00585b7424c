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

#include "lnseg/fpsweep.hpp"

#include <spdlog/fmt/fmt.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lnseg/error.hpp"
#include "lnseg/morphology.hpp"

namespace lnseg {

void SweepConfig::validate() const {
  if (kernel_min < 1) throw Error(Errc::SpecError, "kernel_min must be >= 1");
  if (kernel_step < 1) throw Error(Errc::SpecError, "kernel_step must be >= 1");
  if (kernel_min > kernel_max) throw Error(Errc::SpecError, "kernel_min must not exceed kernel_max");
}

std::vector<int> SweepConfig::kernels() const {
  validate();
  std::vector<int> out;
  for (int k = kernel_min; k <= kernel_max; k += kernel_step) out.push_back(k);
  return out;
}

RatingResult rate_after_morphology(const SweepItem& item, int k, const RaterConfig& rater_cfg) {
  const Mask morphed = morph_open_close(binarize(item.composite, rater_cfg.binarize_threshold), k);
  const ImageF binary = morphed.cast<float>();
  return rate_image(item.image_id, binary, item.annotation, rater_cfg);
}

std::vector<RocPoint> sweep(const std::vector<SweepItem>& items, const SweepConfig& sweep_cfg,
                            const RaterConfig& rater_cfg) {
  if (items.empty()) throw Error(Errc::EmptySet, "sweep needs at least one image");
  std::vector<RocPoint> points;
  for (int k : sweep_cfg.kernels()) {
    std::vector<RatingResult> results;
    results.reserve(items.size());
    for (const auto& item : items) results.push_back(rate_after_morphology(item, k, rater_cfg));
    const Aggregate a = aggregate(results);
    points.push_back({k, a.sensitivity, a.fp_per_image});
  }
  return points;
}

void write_roc_csv(const std::filesystem::path& path, const std::vector<RocPoint>& points) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << "kernel_size,sensitivity,fp_per_image\n";
  for (const auto& p : points) out << fmt::format("{},{:.6f},{:.6f}\n", p.kernel_size, p.sensitivity, p.fp_per_image);
}

std::vector<RocPoint> read_roc_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<RocPoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    RocPoint p;
    char c1 = 0, c2 = 0;
    std::istringstream ss(line);
    if (!(ss >> p.kernel_size >> c1 >> p.sensitivity >> c2 >> p.fp_per_image) || c1 != ',' || c2 != ',') {
      throw Error(Errc::MalformedFile, path.string() + ": bad ROC row '" + line + "'");
    }
    out.push_back(p);
  }
  return out;
}

void write_roc_svg(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, std::vector<RocPoint>>>& curves) {
  constexpr double W = 640, H = 480, L = 60, R = 20, T = 20, B = 50;
  double max_fp = 1.0;
  for (const auto& [name, pts] : curves)
    for (const auto& p : pts) max_fp = std::max(max_fp, p.fp_per_image);
  max_fp = std::ceil(max_fp);
  auto sx = [&](double fp) { return L + (W - L - R) * fp / max_fp; };
  auto sy = [&](double s) { return H - B - (H - T - B) * s / 100.0; };
  static const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ostringstream svg;
  svg << fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">\n", W, H);
  svg << fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", W, H);
  svg << fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", L, H - B, W - R, H - B);
  svg << fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", L, T, L, H - B);
  svg << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">FP per image (0 to {})</text>\n",
                     (L + W - R) / 2, H - 15, max_fp);
  svg << fmt::format("<text x=\"15\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 15 {})\" "
                     "text-anchor=\"middle\">Sensitivity (%)</text>\n",
                     (T + H - B) / 2, (T + H - B) / 2);
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& [name, pts] = curves[i];
    const char* colour = kColours[i % 6];
    svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" points=\"";
    for (const auto& p : pts) svg << fmt::format("{:.2f},{:.2f} ", sx(p.fp_per_image), sy(p.sensitivity));
    svg << "\"/>\n";
    svg << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{}\">{}</text>\n", W - R - 150,
                       T + 15 * (i + 1), colour, name);
  }
  svg << "</svg>\n";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << svg.str();
}

}  // namespace lnseg
