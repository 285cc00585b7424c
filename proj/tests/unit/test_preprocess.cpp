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


#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "lnseg/preprocess.hpp"
#include "support.hpp"

using namespace lnseg;
using lnseg::test::error_code_of;

namespace {

ImageF random_image(int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  ImageF img(dim, dim);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = unit(rng) * unit(rng);
  return img;
}

}  // namespace

TEST_SUITE("preprocess") {
  TEST_CASE("equalisation maps each bin to its cumulative share") {
    const ImageF img = random_image(37, 1);
    const int bins = 64;
    const ImageF eq = equalize_histogram(img, bins);
    // Oracle: rank of each pixel's bin among all pixels.
    auto bin = [&](float v) { return std::clamp(int(std::floor(double(v) * bins)), 0, bins - 1); };
    for (int y = 0; y < img.rows(); y += 5) {
      for (int x = 0; x < img.cols(); x += 3) {
        int at_or_below = 0;
        for (Eigen::Index i = 0; i < img.size(); ++i) at_or_below += bin(img.data()[i]) <= bin(img(y, x));
        CHECK(eq(y, x) == doctest::Approx(double(at_or_below) / img.size()).epsilon(1e-6));
      }
    }
    CHECK(eq.maxCoeff() == doctest::Approx(1.0));
  }

  TEST_CASE("equalisation is monotone and flattens the histogram") {
    const ImageF img = random_image(128, 2);
    const ImageF eq = equalize_histogram(img, 256);
    std::vector<std::pair<float, float>> pairs;
    for (Eigen::Index i = 0; i < img.size(); ++i) pairs.emplace_back(img.data()[i], eq.data()[i]);
    std::sort(pairs.begin(), pairs.end());
    for (std::size_t i = 1; i < pairs.size(); ++i) CHECK_LE(pairs[i - 1].second, pairs[i].second);
    // Quartiles of the equalised image sit near 0.25, 0.5, 0.75.
    std::vector<float> v(eq.data(), eq.data() + eq.size());
    std::sort(v.begin(), v.end());
    for (double q : {0.25, 0.5, 0.75}) CHECK(v[std::size_t(q * v.size())] == doctest::Approx(q).epsilon(0.05));
  }

  TEST_CASE("equalisation guards") {
    CHECK(error_code_of([] { equalize_histogram(ImageF(0, 0)); }) == Errc::ShapeError);
    CHECK(error_code_of([] { equalize_histogram(ImageF::Zero(4, 4), 1); }) == Errc::SpecError);
    const ImageF flat = ImageF::Constant(8, 8, 0.3f);
    CHECK((equalize_histogram(flat) == 1.0f).all());
  }

  TEST_CASE("lung masking zeroes everything outside the lung") {
    ImageF img = ImageF::Constant(8, 8, 0.7f);
    Mask lung = Mask::Zero(8, 8);
    lung.block(2, 2, 3, 3).setOnes();
    const ImageF out = apply_lung_mask(img, lung);
    CHECK(out.sum() == doctest::Approx(9 * 0.7));
    CHECK(out(3, 3) == 0.7f);
    CHECK(out(0, 0) == 0.0f);
    CHECK(error_code_of([&] { apply_lung_mask(img, Mask::Zero(4, 4)); }) == Errc::ShapeMismatch);
  }

  TEST_CASE("area downsampling by an integer factor is the block mean") {
    const ImageF img = random_image(64, 3);
    const ImageF out = resample(img, 16, ResampleFilter::Area);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        CHECK(out(y, x) == doctest::Approx(img.block(4 * y, 4 * x, 4, 4).mean()).epsilon(1e-5));
    CHECK(out.mean() == doctest::Approx(img.mean()).epsilon(1e-4));
  }

  TEST_CASE("resampling preserves constants and ramps") {
    const ImageF flat = ImageF::Constant(32, 32, 0.25f);
    for (auto f : {ResampleFilter::Area, ResampleFilter::Bilinear, ResampleFilter::Nearest}) {
      CHECK((resample(flat, 8, f) - 0.25f).abs().maxCoeff() < 1e-6);
      CHECK((resample(flat, 128, f) - 0.25f).abs().maxCoeff() < 1e-6);
    }
    // A linear ramp in pixel-centre coordinates survives area averaging.
    ImageD ramp(32, 32);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) ramp(y, x) = x;
    const ImageD half = resample(ramp, 16, ResampleFilter::Area);
    for (int x = 0; x < 16; ++x) CHECK(half(5, x) == doctest::Approx(2 * x + 0.5));
    CHECK(error_code_of([] { resample(ImageF::Zero(4, 5), 2, ResampleFilter::Area); }) == Errc::ShapeError);
  }

  TEST_CASE("nearest resampling of masks keeps labels binary") {
    Mask m = Mask::Zero(16, 16);
    m.block(4, 4, 8, 8).setOnes();
    const Mask up = resample(m, 32, ResampleFilter::Nearest);
    CHECK(up.maxCoeff() == 1);
    CHECK((up != 0).count() == 4 * 64);
  }

  TEST_CASE("variants select equalisation and segmentation") {
    CHECK_FALSE(PreprocessConfig::for_variant(Variant::Raw, 512).equalize);
    CHECK(PreprocessConfig::for_variant(Variant::Equalized, 512).equalize);
    CHECK(PreprocessConfig::for_variant(Variant::Segmented, 512).segment_lung);
    const auto both = PreprocessConfig::for_variant(Variant::EqualizedSegmented, 512);
    CHECK((both.equalize && both.segment_lung));
    for (auto v : {Variant::Raw, Variant::Equalized, Variant::Segmented, Variant::EqualizedSegmented})
      CHECK(parse_variant(to_string(v)) == v);
  }

  TEST_CASE("target dims are validated") {
    PreprocessConfig cfg;
    for (int d : {512, 1024, 2048}) {
      cfg.target_dim = d;
      CHECK_NOTHROW(cfg.validate());
    }
    cfg.target_dim = 256;
    CHECK(error_code_of([&] { cfg.validate(); }) == Errc::SpecError);
    CHECK_NOTHROW(cfg.validate(true));
    cfg.target_dim = 300;
    CHECK(error_code_of([&] { cfg.validate(true); }) == Errc::SpecError);
  }

  TEST_CASE("pipeline rescales pixels, annotation and mask together") {
    ImageRecord rec;
    rec.image_id = "r";
    rec.dim = 2048;
    rec.pixels = ImageF::Constant(2048, 2048, 0.5f);
    Mask lung = Mask::Zero(2048, 2048);
    lung.block(0, 0, 2048, 1024).setOnes();
    rec.lung_mask = lung;
    NoduleAnnotation a;
    a.center_x = 1000;
    a.center_y = 600;
    a.diameter_px = 171.43;
    rec.annotation = a;
    const auto out = run_pipeline(rec, PreprocessConfig::for_variant(Variant::Segmented, 512));
    CHECK(out.dim == 512);
    CHECK(out.pixels.rows() == 512);
    CHECK(out.annotation->center_x == doctest::Approx((1000 + 0.5) / 4 - 0.5));
    CHECK(out.annotation->center_y == doctest::Approx((600 + 0.5) / 4 - 0.5));
    CHECK(out.annotation->diameter_px == doctest::Approx(171.43 / 4));
    CHECK(out.pixels(10, 100) == doctest::Approx(0.5));
    CHECK(out.pixels(10, 400) == 0.0f);
    CHECK(out.lung_mask->rows() == 512);
    CHECK_FALSE(out.interpolated);

    rec.lung_mask.reset();
    CHECK(error_code_of([&] { run_pipeline(rec, PreprocessConfig::for_variant(Variant::Segmented, 512)); }) ==
          Errc::MissingMask);
  }

  TEST_CASE("upsampling is flagged as interpolated") {
    ImageRecord rec;
    rec.image_id = "small";
    rec.dim = 1024;
    rec.pixels = ImageF::Constant(1024, 1024, 0.2f);
    const auto out = run_pipeline(rec, PreprocessConfig::for_variant(Variant::Raw, 2048));
    CHECK(out.interpolated);
    CHECK(out.dim == 2048);
  }
}
