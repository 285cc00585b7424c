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


#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "lnseg/dataio.hpp"
#include "lnseg/png_io.hpp"
#include "support.hpp"

using namespace lnseg;
using lnseg::test::error_code_of;
using lnseg::test::TempDir;
using lnseg::test::write_text;

namespace {

DatasetSpec small_raw_spec(int dim, bool inverted = false) {
  DatasetSpec s = DatasetSpec::jsrt();
  s.native_dim = dim;
  s.raw_format.intensity_inverted = inverted;
  return s;
}

void write_words(const std::filesystem::path& p, const std::vector<std::uint16_t>& words) {
  std::string bytes;
  for (auto w : words) {
    bytes.push_back(char(w >> 8));
    bytes.push_back(char(w & 0xff));
  }
  write_text(p, bytes);
}

ImageRecord annotated(const std::string& id, Subtlety s) {
  ImageRecord r;
  r.image_id = id;
  NoduleAnnotation a;
  a.image_id = id;
  a.subtlety = s;
  r.annotation = a;
  return r;
}

}  // namespace

TEST_SUITE("dataio") {
  TEST_CASE("all-zero raw16 file loads as zeros at full size") {
    TempDir dir("raw");
    const auto spec = small_raw_spec(2048);
    write_words(dir / "zero.IMG", std::vector<std::uint16_t>(2048 * 2048, 0));
    const auto rec = load_image(dir / "zero.IMG", spec);
    CHECK(rec.dim == 2048);
    CHECK(rec.pixels.rows() == 2048);
    CHECK(rec.pixels.maxCoeff() == 0.0f);
    CHECK(rec.image_id == "zero");
  }

  TEST_CASE("full-scale 12-bit word maps to 1 and inversion flips it") {
    TempDir dir("raw");
    std::vector<std::uint16_t> words(16, 0);
    words[5] = 4095;
    write_words(dir / "a.IMG", words);
    const auto plain = load_image(dir / "a.IMG", small_raw_spec(4));
    CHECK(plain.pixels(1, 1) == doctest::Approx(1.0));
    CHECK(plain.pixels(0, 0) == 0.0f);
    const auto inv = load_image(dir / "a.IMG", small_raw_spec(4, true));
    CHECK(inv.pixels(1, 1) == doctest::Approx(0.0));
    CHECK(inv.pixels(0, 0) == doctest::Approx(1.0));
  }

  TEST_CASE("little-endian words decode by byte order") {
    TempDir dir("raw");
    write_text(dir / "le.IMG", std::string("\x01\x00\x00\x01\x00\x00\x00\x00", 8));
    auto spec = small_raw_spec(2);
    spec.raw_format.byte_order = ByteOrder::Little;
    spec.raw_format.bit_depth = 16;
    const auto rec = load_image(dir / "le.IMG", spec);
    CHECK(rec.pixels(0, 0) == doctest::Approx(1.0 / 65535));
    CHECK(rec.pixels(0, 1) == doctest::Approx(256.0 / 65535));
  }

  TEST_CASE("raw16 round trip is exact to one quantisation step") {
    TempDir dir("raw");
    for (bool inverted : {false, true}) {
      const auto spec = small_raw_spec(64, inverted);
      ImageF ramp(64, 64);
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) ramp(y, x) = float((x + 64 * y) / 4095.0);
      write_raw16(dir / "ramp.IMG", ramp, spec);
      const auto back = load_image(dir / "ramp.IMG", spec);
      CHECK((back.pixels - ramp).abs().maxCoeff() <= 1.0 / 4095 + 1e-6);
    }
  }

  TEST_CASE("wrong file size is MalformedFile, PNG size mismatch is SpecMismatch") {
    TempDir dir("raw");
    write_words(dir / "short.IMG", std::vector<std::uint16_t>(15, 0));
    CHECK(error_code_of([&] { load_image(dir / "short.IMG", small_raw_spec(4)); }) == Errc::MalformedFile);
    png::write_gray16(dir / "img.png", ImageF::Zero(8, 8));
    auto spec = small_raw_spec(16);
    spec.raw_format.container = Container::Png;
    CHECK(error_code_of([&] { load_image(dir / "img.png", spec); }) == Errc::SpecMismatch);
    spec.native_dim = 8;
    CHECK(load_image(dir / "img.png", spec).dim == 8);
  }

  TEST_CASE("annotation sizes convert from millimetres by the pixel spacing") {
    TempDir dir("ann");
    write_text(dir / "a.csv",
               "image_id,x,y,size,subtlety,malignancy,diagnosis\n"
               "JPCLN001.IMG,1634,1302,30,4,malignant, Adenocarcinoma \n"
               "JPCLN002,10,20,15,odd value,,\n");
    const auto anns = parse_annotations(dir / "a.csv", DatasetSpec::jsrt());
    REQUIRE(anns.size() == 2);
    CHECK(anns[0].image_id == "JPCLN001");
    CHECK(anns[0].diameter_px == doctest::Approx(30.0 / 0.175));
    CHECK(anns[0].diameter_px == doctest::Approx(171.43).epsilon(1e-4));
    CHECK(anns[0].subtlety == Subtlety::RelativelyObvious);
    CHECK(anns[0].malignancy == Malignancy::Malignant);
    CHECK(anns[0].diagnosis == "Adenocarcinoma");
    CHECK(anns[1].subtlety == Subtlety::Unknown);
    CHECK(anns[1].malignancy == Malignancy::Unknown);
  }

  TEST_CASE("annotation schema and range errors") {
    TempDir dir("ann");
    write_text(dir / "nosize.csv", "image_id,x,y\nA,1,2\n");
    CHECK(error_code_of([&] { parse_annotations(dir / "nosize.csv", DatasetSpec::jsrt()); }) == Errc::SchemaError);
    write_text(dir / "edge.csv", "image_id,x,y,size\nA,2048,10,5\n");
    CHECK(error_code_of([&] { parse_annotations(dir / "edge.csv", DatasetSpec::jsrt()); }) == Errc::RangeError);
    write_text(dir / "last.csv", "image_id,x,y,size\nA,2047,10,5\n");
    CHECK(parse_annotations(dir / "last.csv", DatasetSpec::jsrt()).size() == 1);
  }

  TEST_CASE("annotations round trip through write_annotations") {
    TempDir dir("ann");
    NoduleAnnotation a;
    a.image_id = "X1";
    a.center_x = 100.5;
    a.center_y = 200.25;
    a.diameter_px = 57.0;
    a.subtlety = Subtlety::Subtle;
    a.side = Side::Left;
    a.lobe = Lobe::Upper;
    a.sex = Sex::Female;
    a.age = 61;
    a.diagnosis = "granuloma, calcified";
    write_annotations(dir / "out.csv", {a}, DatasetSpec::jsrt());
    const auto back = parse_annotations(dir / "out.csv", DatasetSpec::jsrt());
    REQUIRE(back.size() == 1);
    CHECK(back[0].center_x == doctest::Approx(a.center_x));
    CHECK(back[0].diameter_px == doctest::Approx(a.diameter_px));
    CHECK(back[0].subtlety == Subtlety::Subtle);
    CHECK(back[0].side == Side::Left);
    CHECK(back[0].lobe == Lobe::Upper);
    CHECK(back[0].age == 61);
    CHECK(back[0].diagnosis == "granuloma, calcified");
  }

  TEST_CASE("nodule circle area matches the analytic disk") {
    NoduleAnnotation a;
    a.center_x = 1024;
    a.center_y = 1024;
    a.diameter_px = 200;
    const auto m = synthesize_nodule_mask(a, 2048, 2048);
    const double area = (m.mask != 0).count();
    CHECK(std::abs(area - M_PI * 100 * 100) / (M_PI * 100 * 100) < 0.02);
    CHECK(m.radius == doctest::Approx(100));
    CHECK_FALSE(m.radius_clamped);
  }

  TEST_CASE("nodule circle rescales with the resolution") {
    NoduleAnnotation a;
    a.center_x = 1024;
    a.center_y = 1024;
    a.diameter_px = 200;
    const auto m = synthesize_nodule_mask(a, 1024, 2048);
    CHECK(m.radius == doctest::Approx(50));
    // Centre (c + 0.5) / 2 - 0.5 = 511.75 is inside; the disk spans 50 px.
    CHECK(m.mask(512, 512) == 1);
    CHECK(m.mask(512, 512 + 51) == 0);
    CHECK(m.mask(512, 512 + 49) == 1);
  }

  TEST_CASE("sub-pixel nodule radius clamps to one") {
    NoduleAnnotation a;
    a.center_x = 100;
    a.center_y = 100;
    a.diameter_px = 1;
    const auto m = synthesize_nodule_mask(a, 512, 2048);
    CHECK(m.radius == 1.0);
    CHECK(m.radius_clamped);
    CHECK((m.mask != 0).count() > 0);
  }

  TEST_CASE("rescaled circles agree with nearest resampling of the full-size circle") {
    NoduleAnnotation a;
    a.center_x = 700.3;
    a.center_y = 911.8;
    a.diameter_px = 120;
    const auto big = synthesize_nodule_mask(a, 2048, 2048).mask;
    const auto small = synthesize_nodule_mask(a, 512, 2048).mask;
    // Nearest sample of the 2048 mask at each 512 pixel centre.
    int inter = 0, uni = 0;
    for (int y = 0; y < 512; ++y) {
      for (int x = 0; x < 512; ++x) {
        const bool p = big(4 * y + 2, 4 * x + 2) != 0;
        const bool q = small(y, x) != 0;
        inter += p && q;
        uni += p || q;
      }
    }
    CHECK(double(inter) / uni >= 0.95);
  }

  TEST_CASE("in-lung filter keeps centres on foreground and needs masks") {
    ImageRecord in, out;
    in.image_id = "in";
    out.image_id = "out";
    Mask lung = Mask::Zero(16, 16);
    lung.block(4, 4, 8, 8).setOnes();
    NoduleAnnotation a;
    a.center_x = 6;
    a.center_y = 6;
    in.annotation = a;
    a.center_x = 1;
    out.annotation = a;
    in.lung_mask = lung;
    out.lung_mask = lung;
    in.dim = out.dim = 16;
    const auto kept = make_jsrt_a({in, out});
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].image_id == "in");
    CHECK(jsrt_a_exclusions({in, out}) == std::vector<std::string>{"out"});
    ImageRecord bare = in;
    bare.lung_mask.reset();
    CHECK(error_code_of([&] { make_jsrt_a({bare}); }) == Errc::MissingMask);
  }

  TEST_CASE("bounding boxes become circles at the box centre") {
    BBoxRow row{"00000001_000", "Nodule", 100, 200, 40, 60};
    const auto a = bbox_to_annotation(row);
    CHECK(a.center_x == doctest::Approx(120));
    CHECK(a.center_y == doctest::Approx(230));
    CHECK(a.diameter_px == doctest::Approx(60));
    CHECK(a.image_id == "00000001_000");
  }

  TEST_CASE("NIH masks need Nodule labels and a curation list") {
    TempDir dir("nih");
    write_text(dir / "bbox.csv",
               "Image Index,Finding Label,Bbox [x,y,w,h]\n"
               "a.png,Nodule,10,10,20,30\n"
               "b.png,Mass,50,50,20,20\n"
               "c.png,Nodule,300,300,40,10\n");
    const auto rows = parse_bbox_file(dir / "bbox.csv");
    REQUIRE(rows.size() == 3);
    const auto nodules = select_label(rows, "Nodule");
    CHECK(nodules.size() == 2);
    CHECK(error_code_of([&] { make_nih_masks(rows, {"a"}, 1024); }) == Errc::LabelError);
    CHECK(error_code_of([&] { make_nih_masks(nodules, {}, 1024); }) == Errc::CurationListMissing);
    const auto kept = make_nih_masks(nodules, {"c"}, 512);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].annotation.image_id == "c");
    CHECK(kept[0].mask.rows() == 512);
  }

  TEST_CASE("curation list parsing and refusal") {
    TempDir dir("cur");
    CHECK(error_code_of([&] { load_curation_list(dir / "absent.txt"); }) == Errc::CurationListMissing);
    write_text(dir / "empty.txt", "# nothing yet\n\n");
    CHECK(error_code_of([&] { load_curation_list(dir / "empty.txt"); }) == Errc::CurationListMissing);
    write_text(dir / "list.txt", "# header\nA.png\n B  # trailing\n\nC\n");
    const auto ids = load_curation_list(dir / "list.txt");
    CHECK(ids.size() == 3);
    CHECK(ids.count("B") == 1);
    // The shipped template is a template: it must be refused.
    const auto shipped = std::filesystem::path(LNSEG_SOURCE_DIR) / "data" / "nih_curation_template.txt";
    CHECK(error_code_of([&] { load_curation_list(shipped); }) == Errc::CurationListMissing);
  }

  TEST_CASE("folds partition the ids with balanced sizes") {
    std::vector<std::string> ids;
    for (int i = 0; i < 140; ++i) ids.push_back("JPCLN" + std::to_string(1000 + i));
    const auto plan = make_folds(ids, 10, 42);
    std::set<std::string> seen;
    for (int f = 0; f < 10; ++f) {
      const auto m = plan.members(f);
      CHECK(m.size() == 14);
      for (const auto& id : m) CHECK(seen.insert(id).second);
    }
    CHECK(seen.size() == 140);

    std::vector<std::string> odd(ids.begin(), ids.begin() + 23);
    const auto p2 = make_folds(odd, 10, 1);
    std::size_t lo = 100, hi = 0;
    for (int f = 0; f < 10; ++f) {
      lo = std::min(lo, p2.members(f).size());
      hi = std::max(hi, p2.members(f).size());
    }
    CHECK(hi - lo <= 1);
  }

  TEST_CASE("folds depend only on the id set and seed") {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("id" + std::to_string(i));
    const auto a = make_folds(ids, 10, 7);
    for (int f = 0; f < 10; ++f) CHECK(a.members(f).size() == 1);
    std::vector<std::string> reversed(ids.rbegin(), ids.rend());
    CHECK(make_folds(reversed, 10, 7).assignments == a.assignments);
    CHECK(make_folds(ids, 10, 8).assignments != a.assignments);
    ids.push_back("id3");
    CHECK(error_code_of([&] { make_folds(ids, 10, 7); }) == Errc::DuplicateId);
    CHECK(error_code_of([&] { make_folds({"a", "b"}, 1, 7); }) == Errc::SpecError);
  }

  TEST_CASE("subtlety categories are nested and count as the published table") {
    std::vector<ImageRecord> recs;
    // 140 positives: 50 obvious or relatively obvious, 48 subtle, 23 very
    // subtle, 19 extremely subtle.
    const std::vector<std::pair<Subtlety, int>> mix{{Subtlety::Obvious, 20},
                                                    {Subtlety::RelativelyObvious, 30},
                                                    {Subtlety::Subtle, 48},
                                                    {Subtlety::VerySubtle, 23},
                                                    {Subtlety::ExtremelySubtle, 19}};
    int n = 0;
    for (const auto& [s, count] : mix)
      for (int i = 0; i < count; ++i) recs.push_back(annotated("r" + std::to_string(n++), s));
    recs.push_back(annotated("unknown", Subtlety::Unknown));
    CHECK(filter_by_category(recs, SubtletyCategory::of(CategoryLabel::A)).size() == 140);
    CHECK(filter_by_category(recs, SubtletyCategory::of(CategoryLabel::B)).size() == 121);
    CHECK(filter_by_category(recs, SubtletyCategory::of(CategoryLabel::C)).size() == 98);
    CHECK(filter_by_category(recs, SubtletyCategory::of(CategoryLabel::D)).size() == 50);
    CHECK(filter_by_category({}, SubtletyCategory::of(CategoryLabel::B)).empty());
    const CategoryLabel order[] = {CategoryLabel::D, CategoryLabel::C, CategoryLabel::B, CategoryLabel::A};
    for (int i = 0; i + 1 < 4; ++i)
      for (auto s : SubtletyCategory::of(order[i]).included_subtleties)
        CHECK(SubtletyCategory::of(order[i + 1]).contains(s));
    CHECK(tightest_category(Subtlety::Subtle) == CategoryLabel::C);
    CHECK_FALSE(tightest_category(Subtlety::Unknown).has_value());
  }

  TEST_CASE("quoted cells keep their delimiters") {
    const auto cells = split_delimited(R"(a,"b,c",d)", ',');
    REQUIRE(cells.size() == 3);
    CHECK(cells[1] == "b,c");
  }
}
