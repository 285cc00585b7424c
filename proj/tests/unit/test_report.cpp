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
#include <fstream>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "lnseg/report.hpp"
#include "support.hpp"

using namespace lnseg;
using lnseg::test::error_code_of;
using lnseg::test::TempDir;

namespace {

struct Fixture {
  std::vector<RatingResult> results;
  std::map<std::string, NoduleAnnotation> annotations;
};

Fixture random_fixture(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Fixture f;
  const char* diagnoses[] = {"Adenocarcinoma", " adenocarcinoma ", "Granuloma", "", "Hamartoma"};
  for (int i = 0; i < n; ++i) {
    RatingResult r;
    r.image_id = "img" + std::to_string(i);
    r.tp = int(rng() % 4 != 0);
    r.fp = int(rng() % 7);
    f.results.push_back(r);
    if (i % 11 == 10) continue;  // no annotation: lands in "unknown"
    NoduleAnnotation a;
    a.image_id = r.image_id;
    a.subtlety = Subtlety(rng() % 6);
    a.malignancy = Malignancy(rng() % 3);
    a.side = Side(rng() % 3);
    a.lobe = Lobe(rng() % 4);
    a.sex = Sex(rng() % 3);
    a.diagnosis = diagnoses[rng() % 5];
    f.annotations[r.image_id] = a;
  }
  return f;
}

ReportBundle bundle_for(const Fixture& f) {
  ReportBundle b;
  b.experiment = "ed6_1024_he_seg";
  b.provenance = {"cafe", 7, std::string(code_version())};
  for (auto s : all_stratifiers()) b.tables.push_back(stratify(f.results, f.annotations, s));
  b.roc = {{3, 90.0, 4.0}, {6, 81.0, 2.5}};
  b.cells = {"ed6_1024_he_seg/fold_00"};
  b.notes["interpolated_input"] = "false";
  return b;
}

}  // namespace

TEST_SUITE("report") {
  TEST_CASE("stratum labels") {
    NoduleAnnotation a;
    a.subtlety = Subtlety::VerySubtle;
    a.side = Side::Left;
    a.lobe = Lobe::Upper;
    a.diagnosis = "  Adeno   Carcinoma ";
    a.sex = Sex::Male;
    CHECK(stratum_label(a, Stratifier::Subtlety) == "VerySubtle");
    CHECK(stratum_label(a, Stratifier::Location) == "Left_Upper");
    CHECK(stratum_label(a, Stratifier::Diagnosis) == "adeno carcinoma");
    CHECK(stratum_label(a, Stratifier::Sex) == "Male");
    CHECK(stratum_label(a, Stratifier::Category) == "B");
    CHECK(stratum_label(a, Stratifier::None) == "all");
    CHECK(stratum_label(std::nullopt, Stratifier::Subtlety) == "unknown");
    a.diagnosis.clear();
    CHECK(stratum_label(a, Stratifier::Diagnosis) == "unknown");
    for (auto s : all_stratifiers()) CHECK(parse_stratifier(to_string(s)) == s);
  }

  TEST_CASE("strata recombine to the global aggregate") {
    const auto f = random_fixture(137, 1);
    const auto global = aggregate(f.results);
    for (auto s : all_stratifiers()) {
      CAPTURE(to_string(s));
      const auto t = stratify(f.results, f.annotations, s);
      CHECK(t.total() == global.n);
      double sens = 0, fp = 0;
      int tp = 0;
      for (const auto& r : t.rows) {
        sens += r.sensitivity / 100.0 * r.n;
        fp += r.fp_per_image * r.n;
        tp += r.tp;
      }
      CHECK(tp == global.tp);
      CHECK(std::abs(100.0 * sens / global.n - global.sensitivity) <= 1e-9);
      CHECK(std::abs(fp / global.n - global.fp_per_image) <= 1e-9);
      for (std::size_t i = 1; i < t.rows.size(); ++i) CHECK(t.rows[i - 1].label < t.rows[i].label);
    }
    CHECK(error_code_of([&] { stratify({}, f.annotations, Stratifier::Sex); }) == Errc::EmptySet);
  }

  TEST_CASE("fold statistics use the sample standard deviation") {
    const auto s = fold_statistics({100.0, 0.0});
    CHECK(s.mean == doctest::Approx(50.0));
    CHECK(s.sd == doctest::Approx(70.7107).epsilon(1e-5));
    CHECK(s.folds == 2);
    CHECK(fold_statistics({5, 5, 5}).sd == 0.0);
    CHECK(error_code_of([] { fold_statistics({42.0}); }) == Errc::InsufficientHistory);
  }

  TEST_CASE("pooling folds sums counts and reports the spread") {
    StratifiedTable a, b;
    a.stratifier = b.stratifier = Stratifier::Sex;
    a.rows = {{"Female", 2, 2, 1, 100.0, 0.5, {}}, {"Male", 2, 1, 4, 50.0, 2.0, {}}};
    b.rows = {{"Female", 2, 0, 3, 0.0, 1.5, {}}};
    const auto pooled = pool_folds({a, b});
    REQUIRE(pooled.rows.size() == 2);
    CHECK(pooled.rows[0].label == "Female");
    CHECK(pooled.rows[0].n == 4);
    CHECK(pooled.rows[0].tp == 2);
    CHECK(pooled.rows[0].sensitivity == doctest::Approx(50.0));
    CHECK(pooled.rows[0].fp_per_image == doctest::Approx(1.0));
    REQUIRE(pooled.rows[0].sensitivity_sd.has_value());
    CHECK(*pooled.rows[0].sensitivity_sd == doctest::Approx(70.7107).epsilon(1e-5));
    CHECK_FALSE(pooled.rows[1].sensitivity_sd.has_value());
  }

  TEST_CASE("emit is deterministic and complete") {
    TempDir dir("report");
    const auto f = random_fixture(40, 2);
    const auto bundle = bundle_for(f);
    const auto files = emit(bundle, dir / "a");
    emit(bundle, dir / "b");
    CHECK(files.size() == all_stratifiers().size() + 2);
    for (const auto& p : files) {
      const auto rel = std::filesystem::relative(p, dir / "a");
      CHECK(lnseg::test::read_text(p) == lnseg::test::read_text(dir / "b" / rel));
    }
    nlohmann::json j;
    std::ifstream(dir / "a" / "summary.json") >> j;
    CHECK(j["schema_version"] == 1);
    CHECK(j["provenance"]["seed"] == 7);
    CHECK(j["provenance"]["config_hash"] == "cafe");
    CHECK(j["tables"].contains("diagnosis"));
    CHECK(j["roc"]["points"] == 2);
  }

  TEST_CASE("missing ROC is recorded, unwritable destinations fail") {
    TempDir dir("report");
    auto bundle = bundle_for(random_fixture(10, 3));
    bundle.roc.clear();
    emit(bundle, dir / "out");
    CHECK_FALSE(std::filesystem::exists(dir / "out" / "roc.csv"));
    nlohmann::json j;
    std::ifstream(dir / "out" / "summary.json") >> j;
    CHECK(j["roc"].is_null());
    CHECK(j["notes"].contains("roc"));
    lnseg::test::write_text(dir / "file", "x");
    CHECK(error_code_of([&] { emit(bundle, dir / "file" / "sub"); }) == Errc::IoError);
  }
}
