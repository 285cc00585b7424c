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

#include "lnseg/dataio.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

#include "lnseg/error.hpp"
#include "lnseg/png_io.hpp"
#include "lnseg/preprocess.hpp"
#include "lnseg/rng.hpp"

namespace lnseg {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool contains(const std::string& haystack, std::string_view needle) {
  return haystack.find(needle) != std::string::npos;
}

double parse_number(const std::string& cell, const std::string& what, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (trim(cell.substr(used)).empty()) return v;
  } catch (const std::exception&) {
  }
  throw Error(Errc::SchemaError,
              "line " + std::to_string(line_no) + ": cannot parse " + what + " from '" + cell + "'");
}

// Header lookup: column name (case-folded, trimmed) -> index.
class Header {
 public:
  explicit Header(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) index_[lower(trim(cells[i]))] = i;
  }
  std::optional<std::size_t> find(std::initializer_list<std::string_view> names) const {
    for (auto n : names) {
      auto it = index_.find(std::string(n));
      if (it != index_.end()) return it->second;
    }
    return std::nullopt;
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  // UTF-8 byte-order mark
  if (!lines.empty() && lines[0].rfind("\xEF\xBB\xBF", 0) == 0) lines[0].erase(0, 3);
  return lines;
}

}  // namespace

void DatasetSpec::validate() const {
  if (!(pixel_spacing_mm > 0)) throw Error(Errc::SpecError, "pixel_spacing_mm must be positive");
  if (native_dim <= 0) throw Error(Errc::SpecError, "native_dim must be positive");
  if (raw_format.bit_depth < 8 || raw_format.bit_depth > 16) {
    throw Error(Errc::SpecError, "bit_depth must lie in [8, 16]");
  }
}

DatasetSpec DatasetSpec::jsrt() {
  DatasetSpec s;
  s.name = "JSRT";
  return s;
}

DatasetSpec DatasetSpec::nih() {
  DatasetSpec s;
  s.name = "NIH";
  s.native_dim = 1024;
  // Bounding boxes are in pixels, so the spacing is never used for sizes.
  s.pixel_spacing_mm = 1.0;
  s.raw_format = {Container::Png, 8, ByteOrder::Big, false};
  s.size_units = SizeUnits::Pixels;
  return s;
}

std::string_view to_string(Subtlety s) {
  switch (s) {
    case Subtlety::Obvious: return "Obvious";
    case Subtlety::RelativelyObvious: return "RelativelyObvious";
    case Subtlety::Subtle: return "Subtle";
    case Subtlety::VerySubtle: return "VerySubtle";
    case Subtlety::ExtremelySubtle: return "ExtremelySubtle";
    case Subtlety::Unknown: return "Unknown";
  }
  return "Unknown";
}

std::string_view to_string(Malignancy m) {
  switch (m) {
    case Malignancy::Malignant: return "Malignant";
    case Malignancy::Benign: return "Benign";
    case Malignancy::Unknown: return "Unknown";
  }
  return "Unknown";
}

std::string_view to_string(Side s) {
  switch (s) {
    case Side::Left: return "Left";
    case Side::Right: return "Right";
    case Side::Unknown: return "Unknown";
  }
  return "Unknown";
}

std::string_view to_string(Lobe l) {
  switch (l) {
    case Lobe::Upper: return "Upper";
    case Lobe::Middle: return "Middle";
    case Lobe::Lower: return "Lower";
    case Lobe::Unknown: return "Unknown";
  }
  return "Unknown";
}

std::string_view to_string(Sex s) {
  switch (s) {
    case Sex::Female: return "Female";
    case Sex::Male: return "Male";
    case Sex::Unknown: return "Unknown";
  }
  return "Unknown";
}

Subtlety parse_subtlety(std::string_view text) {
  const std::string t = lower(trim(text));
  // JSRT grades 5 (obvious) down to 1 (extremely subtle).
  if (t == "5" || t == "obvious") return Subtlety::Obvious;
  if (t == "4" || t == "relatively obvious" || t == "relativelyobvious" || t == "rel. obvious")
    return Subtlety::RelativelyObvious;
  if (t == "3" || t == "subtle") return Subtlety::Subtle;
  if (t == "2" || t == "very subtle" || t == "verysubtle" || t == "v. subtle") return Subtlety::VerySubtle;
  if (t == "1" || t == "extremely subtle" || t == "extremelysubtle" || t == "e. subtle")
    return Subtlety::ExtremelySubtle;
  return Subtlety::Unknown;
}

Malignancy parse_malignancy(std::string_view text) {
  const std::string t = lower(trim(text));
  if (t == "malignant" || t == "m") return Malignancy::Malignant;
  if (t == "benign" || t == "b") return Malignancy::Benign;
  return Malignancy::Unknown;
}

Side parse_side(std::string_view text) {
  const std::string t = lower(trim(text));
  if (t == "left" || t == "l") return Side::Left;
  if (t == "right" || t == "r") return Side::Right;
  // JSRT location strings such as "l.upper lobe"
  if (t.rfind("l.", 0) == 0 || t.rfind("left ", 0) == 0) return Side::Left;
  if (t.rfind("r.", 0) == 0 || t.rfind("right ", 0) == 0) return Side::Right;
  return Side::Unknown;
}

Lobe parse_lobe(std::string_view text) {
  const std::string t = lower(trim(text));
  if (contains(t, "upper")) return Lobe::Upper;
  if (contains(t, "middle")) return Lobe::Middle;
  if (contains(t, "lower")) return Lobe::Lower;
  return Lobe::Unknown;
}

Sex parse_sex(std::string_view text) {
  const std::string t = lower(trim(text));
  if (t == "female" || t == "f") return Sex::Female;
  if (t == "male" || t == "m") return Sex::Male;
  return Sex::Unknown;
}

std::vector<std::string> split_delimited(std::string_view line, char delimiter) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == delimiter) {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

ImageRecord load_image(const std::filesystem::path& path, const DatasetSpec& spec) {
  spec.validate();
  if (!std::filesystem::exists(path)) throw Error(Errc::IoError, "missing image " + path.string());
  ImageRecord rec;
  rec.image_id = path.stem().string();
  const int dim = spec.native_dim;
  const double full_scale = std::ldexp(1.0, spec.raw_format.bit_depth) - 1.0;

  if (spec.raw_format.container == Container::Raw16) {
    const auto expected = static_cast<std::uintmax_t>(dim) * dim * 2;
    const auto actual = std::filesystem::file_size(path);
    if (actual != expected) {
      throw Error(Errc::MalformedFile, path.string() + ": expected " + std::to_string(expected) +
                                           " bytes for " + std::to_string(dim) + "^2 words, found " +
                                           std::to_string(actual));
    }
    std::ifstream in(path, std::ios::binary);
    std::vector<unsigned char> bytes(expected);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(expected))) {
      throw Error(Errc::MalformedFile, "short read on " + path.string());
    }
    rec.pixels.resize(dim, dim);
    const bool big = spec.raw_format.byte_order == ByteOrder::Big;
    for (Eigen::Index i = 0; i < rec.pixels.size(); ++i) {
      const unsigned hi = bytes[2 * i + (big ? 0 : 1)];
      const unsigned lo = bytes[2 * i + (big ? 1 : 0)];
      const double v = std::min(static_cast<double>((hi << 8) | lo) / full_scale, 1.0);
      rec.pixels.data()[i] = static_cast<float>(v);
    }
  } else {
    const png::GrayImage g = png::read_gray(path);
    if (g.width != g.height || g.width != dim) {
      throw Error(Errc::SpecMismatch, path.string() + ": decoded " + std::to_string(g.width) + "x" +
                                          std::to_string(g.height) + ", declared " +
                                          std::to_string(dim) + "x" + std::to_string(dim));
    }
    // PNG samples are scaled by the decoded depth unless the spec narrows it.
    const double scale = g.bit_depth == 8 ? 255.0 : std::min(full_scale, 65535.0);
    rec.pixels.resize(dim, dim);
    for (Eigen::Index i = 0; i < rec.pixels.size(); ++i) {
      rec.pixels.data()[i] = static_cast<float>(std::min(g.samples[i] / scale, 1.0));
    }
  }
  if (spec.raw_format.intensity_inverted) rec.pixels = 1.0f - rec.pixels;
  rec.dim = dim;
  return rec;
}

void write_raw16(const std::filesystem::path& path, const ImageF& pixels, const DatasetSpec& spec) {
  if (!is_square(pixels)) throw Error(Errc::ShapeError, "write_raw16: image must be square");
  const double full_scale = std::ldexp(1.0, spec.raw_format.bit_depth) - 1.0;
  const bool big = spec.raw_format.byte_order == ByteOrder::Big;
  std::vector<unsigned char> bytes(static_cast<std::size_t>(pixels.size()) * 2);
  for (Eigen::Index i = 0; i < pixels.size(); ++i) {
    double v = std::clamp(static_cast<double>(pixels.data()[i]), 0.0, 1.0);
    if (spec.raw_format.intensity_inverted) v = 1.0 - v;
    const auto word = static_cast<unsigned>(std::lround(v * full_scale));
    bytes[2 * i + (big ? 0 : 1)] = static_cast<unsigned char>(word >> 8);
    bytes[2 * i + (big ? 1 : 0)] = static_cast<unsigned char>(word & 0xff);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Mask load_lung_mask(const std::filesystem::path& path, int dim) {
  const png::GrayImage g = png::read_gray(path);
  if (g.width != g.height) throw Error(Errc::SpecMismatch, path.string() + ": lung mask is not square");
  Mask m(g.height, g.width);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g.samples[i] != 0 ? 1 : 0;
  return resample(m, dim, ResampleFilter::Nearest);
}

std::vector<NoduleAnnotation> parse_annotations(const std::filesystem::path& path,
                                                const DatasetSpec& spec,
                                                const AnnotationOptions& options) {
  spec.validate();
  const auto lines = read_lines(path);
  if (lines.empty()) throw Error(Errc::SchemaError, path.string() + ": missing header row");
  const Header header(split_delimited(lines[0], options.delimiter));
  const auto c_id = header.find({"image_id", "id", "filename"});
  const auto c_x = header.find({"x"});
  const auto c_y = header.find({"y"});
  const auto c_size = header.find({"size", "size_mm", "size_px", "diameter"});
  if (!c_id || !c_x || !c_y || !c_size) {
    throw Error(Errc::SchemaError, path.string() + ": mandatory columns are image_id, x, y, size");
  }
  const auto c_subtlety = header.find({"subtlety"});
  const auto c_malignancy = header.find({"malignancy"});
  const auto c_side = header.find({"side"});
  const auto c_lobe = header.find({"lobe"});
  const auto c_location = header.find({"location"});
  const auto c_diagnosis = header.find({"diagnosis"});
  const auto c_sex = header.find({"sex", "gender"});
  const auto c_age = header.find({"age"});

  std::vector<NoduleAnnotation> out;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    const auto cells = split_delimited(lines[ln], options.delimiter);
    auto cell = [&](const std::optional<std::size_t>& c) -> std::string {
      return c && *c < cells.size() ? trim(cells[*c]) : std::string{};
    };
    NoduleAnnotation a;
    a.image_id = cell(c_id);
    if (a.image_id.empty()) {
      throw Error(Errc::SchemaError, "line " + std::to_string(ln + 1) + ": empty image_id");
    }
    // JSRT filenames carry an extension; ids never do.
    if (auto dot = a.image_id.rfind('.'); dot != std::string::npos) a.image_id.resize(dot);
    a.center_x = parse_number(cell(c_x), "x", ln + 1);
    a.center_y = parse_number(cell(c_y), "y", ln + 1);
    const double size = parse_number(cell(c_size), "size", ln + 1);
    a.diameter_px = spec.size_units == SizeUnits::Millimetres ? size / spec.pixel_spacing_mm : size;
    if (a.center_x < 0 || a.center_y < 0 || a.center_x >= spec.native_dim ||
        a.center_y >= spec.native_dim) {
      throw Error(Errc::RangeError, "line " + std::to_string(ln + 1) + ": centre (" +
                                        cell(c_x) + ", " + cell(c_y) + ") outside a " +
                                        std::to_string(spec.native_dim) + " pixel image");
    }
    if (!(a.diameter_px > 0)) {
      throw Error(Errc::RangeError, "line " + std::to_string(ln + 1) + ": size must be positive");
    }
    a.subtlety = parse_subtlety(cell(c_subtlety));
    a.malignancy = parse_malignancy(cell(c_malignancy));
    a.side = parse_side(cell(c_side));
    a.lobe = parse_lobe(cell(c_lobe));
    if (c_location) {
      if (a.side == Side::Unknown) a.side = parse_side(cell(c_location));
      if (a.lobe == Lobe::Unknown) a.lobe = parse_lobe(cell(c_location));
    }
    a.diagnosis = cell(c_diagnosis);
    a.sex = parse_sex(cell(c_sex));
    if (const std::string age = cell(c_age); !age.empty()) {
      try {
        a.age = std::stoi(age);
      } catch (const std::exception&) {
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

void write_annotations(const std::filesystem::path& path,
                       const std::vector<NoduleAnnotation>& annotations,
                       const DatasetSpec& spec) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << "image_id,x,y,size,subtlety,malignancy,side,lobe,diagnosis,sex,age\n";
  out.precision(10);
  for (const auto& a : annotations) {
    const double size =
        spec.size_units == SizeUnits::Millimetres ? a.diameter_px * spec.pixel_spacing_mm : a.diameter_px;
    out << a.image_id << ',' << a.center_x << ',' << a.center_y << ',' << size << ','
        << to_string(a.subtlety) << ',' << to_string(a.malignancy) << ',' << to_string(a.side) << ','
        << to_string(a.lobe) << ",\"" << a.diagnosis << "\"," << to_string(a.sex) << ','
        << (a.age ? std::to_string(*a.age) : std::string{}) << '\n';
  }
}

bool centroid_in_lung(const ImageRecord& record) {
  if (!record.lung_mask) throw Error(Errc::MissingMask, record.image_id + " has no lung mask");
  if (!record.annotation) throw Error(Errc::SchemaError, record.image_id + " has no annotation");
  const Mask& m = *record.lung_mask;
  const double sx = static_cast<double>(m.cols()) / record.dim;
  const double sy = static_cast<double>(m.rows()) / record.dim;
  const auto x = static_cast<Eigen::Index>(std::floor(record.annotation->center_x * sx));
  const auto y = static_cast<Eigen::Index>(std::floor(record.annotation->center_y * sy));
  if (x < 0 || y < 0 || x >= m.cols() || y >= m.rows()) return false;
  return m(y, x) != 0;
}

std::vector<ImageRecord> make_jsrt_a(std::vector<ImageRecord> records) {
  for (const auto& r : records) {
    if (!r.lung_mask) throw Error(Errc::MissingMask, r.image_id + " has no lung mask");
  }
  std::vector<ImageRecord> kept;
  for (auto& r : records) {
    if (centroid_in_lung(r)) kept.push_back(std::move(r));
  }
  return kept;
}

std::vector<std::string> jsrt_a_exclusions(const std::vector<ImageRecord>& records) {
  std::vector<std::string> ids;
  for (const auto& r : records) {
    if (!centroid_in_lung(r)) ids.push_back(r.image_id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

NoduleMask synthesize_nodule_mask(const NoduleAnnotation& ann, int dim, int native_dim) {
  if (dim <= 0 || native_dim <= 0) throw Error(Errc::SpecError, "dims must be positive");
  const double scale = static_cast<double>(dim) / native_dim;
  const double cx = (ann.center_x + 0.5) * scale - 0.5;
  const double cy = (ann.center_y + 0.5) * scale - 0.5;
  NoduleMask out;
  out.radius = 0.5 * ann.diameter_px * scale;
  if (out.radius < 1.0) {
    spdlog::warn("DegenerateMask: nodule radius {:.3f} px for {} at dim {} clamped to 1", out.radius,
                 ann.image_id, dim);
    out.radius = 1.0;
    out.radius_clamped = true;
  }
  out.mask = Mask::Zero(dim, dim);
  const double r2 = out.radius * out.radius;
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - out.radius)));
  const int y1 = std::min(dim - 1, static_cast<int>(std::ceil(cy + out.radius)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - out.radius)));
  const int x1 = std::min(dim - 1, static_cast<int>(std::ceil(cx + out.radius)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      if (dx * dx + dy * dy <= r2) out.mask(y, x) = 1;
    }
  }
  return out;
}

std::vector<BBoxRow> parse_bbox_file(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw Error(Errc::SchemaError, path.string() + ": missing header row");
  const Header header(split_delimited(lines[0], ','));
  const auto c_id = header.find({"image_id", "image index"});
  const auto c_label = header.find({"label", "finding label"});
  const auto c_x = header.find({"x", "bbox [x"});
  const auto c_y = header.find({"y"});
  const auto c_w = header.find({"w"});
  const auto c_h = header.find({"h", "h]"});
  if (!c_id || !c_label || !c_x || !c_y || !c_w || !c_h) {
    throw Error(Errc::SchemaError, path.string() + ": columns are image_id,label,x,y,w,h");
  }
  std::vector<BBoxRow> rows;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    const auto cells = split_delimited(lines[ln], ',');
    auto cell = [&](std::size_t c) { return c < cells.size() ? trim(cells[c]) : std::string{}; };
    BBoxRow r;
    r.image_id = cell(*c_id);
    if (auto dot = r.image_id.rfind('.'); dot != std::string::npos) r.image_id.resize(dot);
    r.label = cell(*c_label);
    r.x = parse_number(cell(*c_x), "x", ln + 1);
    r.y = parse_number(cell(*c_y), "y", ln + 1);
    r.w = parse_number(cell(*c_w), "w", ln + 1);
    r.h = parse_number(cell(*c_h), "h", ln + 1);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<BBoxRow> select_label(const std::vector<BBoxRow>& rows, std::string_view label) {
  std::vector<BBoxRow> out;
  for (const auto& r : rows) {
    if (r.label == label) out.push_back(r);
  }
  return out;
}

std::set<std::string> load_curation_list(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(Errc::CurationListMissing, "curation list not found: " + path.string());
  }
  std::set<std::string> ids;
  for (const auto& line : read_lines(path)) {
    std::string id = trim(line.substr(0, line.find('#')));
    if (auto dot = id.rfind('.'); dot != std::string::npos) id.resize(dot);
    if (!id.empty()) ids.insert(id);
  }
  if (ids.empty()) {
    throw Error(Errc::CurationListMissing, path.string() + " lists no image ids");
  }
  return ids;
}

NoduleAnnotation bbox_to_annotation(const BBoxRow& row) {
  NoduleAnnotation a;
  a.image_id = row.image_id;
  a.center_x = row.x + row.w / 2.0;
  a.center_y = row.y + row.h / 2.0;
  a.diameter_px = std::max(row.w, row.h);
  return a;
}

std::vector<NihNodule> make_nih_masks(const std::vector<BBoxRow>& rows,
                                      const std::set<std::string>& curated, int dim,
                                      int native_dim) {
  if (curated.empty()) throw Error(Errc::CurationListMissing, "empty NIH curation list");
  std::vector<NihNodule> out;
  std::set<std::string> seen;
  for (const auto& r : rows) {
    if (r.label != "Nodule") {
      throw Error(Errc::LabelError, r.image_id + " carries label '" + r.label + "', expected Nodule");
    }
    if (!curated.count(r.image_id) || !seen.insert(r.image_id).second) continue;
    NihNodule n;
    n.annotation = bbox_to_annotation(r);
    n.mask = synthesize_nodule_mask(n.annotation, dim, native_dim).mask;
    out.push_back(std::move(n));
  }
  return out;
}

int FoldPlan::fold_of(const std::string& image_id) const {
  auto it = assignments.find(image_id);
  if (it == assignments.end()) throw Error(Errc::RangeError, image_id + " is not in the fold plan");
  return it->second;
}

std::vector<std::string> FoldPlan::members(int fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : assignments) {
    if (f == fold) ids.push_back(id);
  }
  return ids;
}

std::vector<std::string> FoldPlan::complement(int fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : assignments) {
    if (f != fold) ids.push_back(id);
  }
  return ids;
}

FoldPlan make_folds(std::vector<std::string> image_ids, int k, std::uint64_t seed) {
  if (k < 2) throw Error(Errc::SpecError, "k must be >= 2");
  std::sort(image_ids.begin(), image_ids.end());
  if (auto dup = std::adjacent_find(image_ids.begin(), image_ids.end()); dup != image_ids.end()) {
    throw Error(Errc::DuplicateId, "duplicate image id " + *dup);
  }
  std::mt19937_64 rng(seed);
  seeded_shuffle(image_ids, rng);
  FoldPlan plan;
  plan.seed = seed;
  plan.k = k;
  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    plan.assignments[image_ids[i]] = static_cast<int>(i % k);
  }
  return plan;
}

std::string_view to_string(CategoryLabel c) {
  switch (c) {
    case CategoryLabel::A: return "A";
    case CategoryLabel::B: return "B";
    case CategoryLabel::C: return "C";
    case CategoryLabel::D: return "D";
  }
  return "A";
}

std::optional<CategoryLabel> parse_category(std::string_view text) {
  const std::string t = lower(trim(text));
  if (t == "a") return CategoryLabel::A;
  if (t == "b") return CategoryLabel::B;
  if (t == "c") return CategoryLabel::C;
  if (t == "d") return CategoryLabel::D;
  return std::nullopt;
}

SubtletyCategory SubtletyCategory::of(CategoryLabel label) {
  SubtletyCategory c;
  c.label = label;
  c.included_subtleties = {Subtlety::Obvious, Subtlety::RelativelyObvious};
  if (label == CategoryLabel::D) return c;
  c.included_subtleties.insert(Subtlety::Subtle);
  if (label == CategoryLabel::C) return c;
  c.included_subtleties.insert(Subtlety::VerySubtle);
  if (label == CategoryLabel::B) return c;
  c.included_subtleties.insert(Subtlety::ExtremelySubtle);
  return c;
}

std::optional<CategoryLabel> tightest_category(Subtlety s) {
  for (auto label : {CategoryLabel::D, CategoryLabel::C, CategoryLabel::B, CategoryLabel::A}) {
    if (SubtletyCategory::of(label).contains(s)) return label;
  }
  return std::nullopt;
}

std::vector<ImageRecord> filter_by_category(const std::vector<ImageRecord>& records,
                                            const SubtletyCategory& category) {
  std::vector<ImageRecord> out;
  for (const auto& r : records) {
    if (r.annotation && category.contains(r.annotation->subtlety)) out.push_back(r);
  }
  return out;
}

}  // namespace lnseg
