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

#include <filesystem>
#include <string>
#include <vector>

#include "lnseg/ednet.hpp"
#include "lnseg/error.hpp"
#include "lnseg/image.hpp"

namespace lnseg {

/// Element-wise maximum of three equally shaped probability maps.
/// Throws ShapeMismatch when the shapes differ.
template <typename DA, typename DB, typename DC>
Image<typename DA::Scalar> compose(const Eigen::ArrayBase<DA>& a, const Eigen::ArrayBase<DB>& b,
                                   const Eigen::ArrayBase<DC>& c) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != c.rows() || a.cols() != c.cols()) {
    throw Error(Errc::ShapeMismatch, "compose: input shapes differ");
  }
  return a.derived().max(b.derived()).max(c.derived());
}

/// The three per-epoch outputs around the selected epoch and their maximum.
struct EpochTriplet {
  int n = 0;
  ImageF previous, selected, next;
  ImageF composite;
};

/// Checkpoint path for epoch e, taken from index e-1. Throws
/// MissingCheckpoint naming the epoch when it is out of range or absent.
const std::filesystem::path& checkpoint_for_epoch(const std::vector<std::filesystem::path>& checkpoints,
                                                  int epoch);

/// Runs the epoch n-1, n and n+1 weights over every image and returns the
/// composite per image. Each weight set is loaded once.
std::vector<ImageF> ensemble_predict(const nn::ModelSpec& spec,
                                     const std::vector<std::filesystem::path>& checkpoints, int n,
                                     const std::vector<ImageF>& images);

/// Single-image form that also keeps the three component outputs.
EpochTriplet ensemble_triplet(const nn::ModelSpec& spec, const std::vector<std::filesystem::path>& checkpoints,
                              int n, const ImageF& image);

/// Composite persistence: 16-bit gray PNG of probability * 65535.
void write_composite(const std::filesystem::path& path, const ImageF& composite);
ImageF read_composite(const std::filesystem::path& path);

}  // namespace lnseg
