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
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "lnseg/image.hpp"

namespace lnseg {

enum class Container { Raw16, Png };
enum class ByteOrder { Big, Little };
enum class SizeUnits { Millimetres, Pixels };

struct RawFormat {
  Container container = Container::Raw16;
  int bit_depth = 12;
  ByteOrder byte_order = ByteOrder::Big;
  // JSRT stores attenuation, so bright bone is a low word value. Verify
  // against your own copy before trusting the default.
  bool intensity_inverted = true;
};

struct DatasetSpec {
  std::string name;
  double pixel_spacing_mm = 0.175;
  int native_dim = 2048;
  RawFormat raw_format;
  SizeUnits size_units = SizeUnits::Millimetres;

  /// Throws Error(SpecError) when a field is out of range.
  void validate() const;

  static DatasetSpec jsrt();
  static DatasetSpec nih();
};

enum class Subtlety { Obvious, RelativelyObvious, Subtle, VerySubtle, ExtremelySubtle, Unknown };
enum class Malignancy { Malignant, Benign, Unknown };
enum class Side { Left, Right, Unknown };
enum class Lobe { Upper, Middle, Lower, Unknown };
enum class Sex { Female, Male, Unknown };

std::string_view to_string(Subtlety s);
std::string_view to_string(Malignancy m);
std::string_view to_string(Side s);
std::string_view to_string(Lobe l);
std::string_view to_string(Sex s);

// Lenient parsers: anything unrecognised is Unknown.
Subtlety parse_subtlety(std::string_view text);
Malignancy parse_malignancy(std::string_view text);
Side parse_side(std::string_view text);
Lobe parse_lobe(std::string_view text);
Sex parse_sex(std::string_view text);

/// Ground-truth nodule. Coordinates are pixels in the frame of the image the
/// annotation is attached to (native_dim at ingestion, target_dim after
/// preprocessing).
struct NoduleAnnotation {
  std::string image_id;
  double center_x = 0.0;
  double center_y = 0.0;
  double diameter_px = 1.0;
  Subtlety subtlety = Subtlety::Unknown;
  Malignancy malignancy = Malignancy::Unknown;
  Side side = Side::Unknown;
  Lobe lobe = Lobe::Unknown;
  std::string diagnosis;
  Sex sex = Sex::Unknown;
  std::optional<int> age;
};

struct ImageRecord {
  std::string image_id;
  ImageF pixels;
  int dim = 0;
  std::optional<NoduleAnnotation> annotation;
  std::optional<Mask> lung_mask;
  // Set when the pixels were produced by upsampling beyond native resolution.
  bool interpolated = false;
};

/// Loads a raw16 or PNG image and normalises it to [0,1].
ImageRecord load_image(const std::filesystem::path& path, const DatasetSpec& spec);

/// Writes pixels as a headerless raw16 file using the spec's word layout;
/// the inverse of load_image for Container::Raw16.
void write_raw16(const std::filesystem::path& path, const ImageF& pixels, const DatasetSpec& spec);

/// Loads a lung-field mask (PNG, nonzero = lung) and resamples it with
/// nearest-neighbour to `dim` when its size differs.
Mask load_lung_mask(const std::filesystem::path& path, int dim);

struct AnnotationOptions {
  char delimiter = ',';
};

/// Parses the annotation table. Mandatory columns: image_id, x, y, size.
std::vector<NoduleAnnotation> parse_annotations(const std::filesystem::path& path,
                                                const DatasetSpec& spec,
                                                const AnnotationOptions& options = {});

/// Writes annotations in the same schema parse_annotations reads (size in
/// the spec's units).
void write_annotations(const std::filesystem::path& path,
                       const std::vector<NoduleAnnotation>& annotations,
                       const DatasetSpec& spec);

/// True when the annotation centre falls on lung foreground.
bool centroid_in_lung(const ImageRecord& record);

/// Keeps the records whose nodule centre lies inside the lung field.
std::vector<ImageRecord> make_jsrt_a(std::vector<ImageRecord> records);

/// Ids that make_jsrt_a would drop, sorted.
std::vector<std::string> jsrt_a_exclusions(const std::vector<ImageRecord>& records);

struct NoduleMask {
  Mask mask;
  double radius = 0.0;
  bool radius_clamped = false;
};

/// Rasterises the circle approximation of a nodule at resolution `dim`.
/// Pixel (x, y) is foreground when (x - cx)^2 + (y - cy)^2 <= r^2 with the
/// radius scaled by s = dim / native_dim and the centre mapped as
/// (c + 0.5) * s - 0.5, the pixel-centre convention resampling uses. A
/// radius below one pixel is clamped to one and logged.
NoduleMask synthesize_nodule_mask(const NoduleAnnotation& ann, int dim, int native_dim);

struct BBoxRow {
  std::string image_id;
  std::string label;
  double x = 0, y = 0, w = 0, h = 0;
};

/// Parses the NIH bounding-box table (image_id,label,x,y,w,h). The header of
/// the upstream BBox_List_2017.csv is accepted as an alias.
std::vector<BBoxRow> parse_bbox_file(const std::filesystem::path& path);

/// Rows carrying `label`, in file order.
std::vector<BBoxRow> select_label(const std::vector<BBoxRow>& rows, std::string_view label);

/// Reads a curation list: one id per line, '#' starts a comment.
/// Throws CurationListMissing when the file is absent or lists no ids.
std::set<std::string> load_curation_list(const std::filesystem::path& path);

/// Circle annotation derived from a bounding box: centre = box centre,
/// diameter = max(w, h).
NoduleAnnotation bbox_to_annotation(const BBoxRow& row);

struct NihNodule {
  NoduleAnnotation annotation;
  Mask mask;
};

/// Builds nodule masks for the curated Nodule rows. Every row must carry the
/// "Nodule" label (LabelError otherwise); rows whose id is not curated are
/// dropped. An empty curation set is refused.
std::vector<NihNodule> make_nih_masks(const std::vector<BBoxRow>& rows,
                                      const std::set<std::string>& curated, int dim,
                                      int native_dim = 1024);

struct FoldPlan {
  std::uint64_t seed = 0;
  int k = 10;
  std::map<std::string, int> assignments;

  int fold_of(const std::string& image_id) const;
  std::vector<std::string> members(int fold) const;
  std::vector<std::string> complement(int fold) const;
};

/// Sorts ids, shuffles them with a seeded Fisher-Yates and deals them
/// round-robin into k folds.
FoldPlan make_folds(std::vector<std::string> image_ids, int k, std::uint64_t seed);

enum class CategoryLabel { A, B, C, D };

std::string_view to_string(CategoryLabel c);
std::optional<CategoryLabel> parse_category(std::string_view text);

struct SubtletyCategory {
  CategoryLabel label = CategoryLabel::A;
  std::set<Subtlety> included_subtleties;

  static SubtletyCategory of(CategoryLabel label);
  bool contains(Subtlety s) const { return included_subtleties.count(s) != 0; }
};

/// Tightest category containing the subtlety, if any.
std::optional<CategoryLabel> tightest_category(Subtlety s);

std::vector<ImageRecord> filter_by_category(const std::vector<ImageRecord>& records,
                                            const SubtletyCategory& category);

/// Splits one delimited line, honouring double quotes.
std::vector<std::string> split_delimited(std::string_view line, char delimiter);

}  // namespace lnseg
