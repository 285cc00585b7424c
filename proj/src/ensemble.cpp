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

#include "lnseg/ensemble.hpp"

#include "lnseg/checkpoint.hpp"
#include "lnseg/png_io.hpp"

namespace lnseg {

const std::filesystem::path& checkpoint_for_epoch(const std::vector<std::filesystem::path>& checkpoints,
                                                  int epoch) {
  if (epoch < 1 || epoch > static_cast<int>(checkpoints.size())) {
    throw Error(Errc::MissingCheckpoint, "no checkpoint recorded for epoch " + std::to_string(epoch));
  }
  const auto& path = checkpoints[epoch - 1];
  if (!std::filesystem::exists(path)) {
    throw Error(Errc::MissingCheckpoint, "checkpoint for epoch " + std::to_string(epoch) + " is missing: " +
                                             path.string());
  }
  return path;
}

namespace {

std::vector<ImageF> run_epoch(const nn::ModelSpec& spec, const std::filesystem::path& path,
                              const std::vector<ImageF>& images) {
  nn::EncoderDecoder<float> model(spec);
  nn::load_checkpoint(path, model);
  std::vector<ImageF> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(model.predict(img));
  return out;
}

}  // namespace

std::vector<ImageF> ensemble_predict(const nn::ModelSpec& spec,
                                     const std::vector<std::filesystem::path>& checkpoints, int n,
                                     const std::vector<ImageF>& images) {
  // Resolve all three first so a missing epoch fails before any inference.
  const auto& p0 = checkpoint_for_epoch(checkpoints, n - 1);
  const auto& p1 = checkpoint_for_epoch(checkpoints, n);
  const auto& p2 = checkpoint_for_epoch(checkpoints, n + 1);
  std::vector<ImageF> composite = run_epoch(spec, p0, images);
  for (const auto* path : {&p1, &p2}) {
    std::vector<ImageF> next = run_epoch(spec, *path, images);
    for (std::size_t i = 0; i < composite.size(); ++i) composite[i] = composite[i].max(next[i]);
  }
  return composite;
}

EpochTriplet ensemble_triplet(const nn::ModelSpec& spec, const std::vector<std::filesystem::path>& checkpoints,
                              int n, const ImageF& image) {
  const auto& p0 = checkpoint_for_epoch(checkpoints, n - 1);
  const auto& p1 = checkpoint_for_epoch(checkpoints, n);
  const auto& p2 = checkpoint_for_epoch(checkpoints, n + 1);
  EpochTriplet t;
  t.n = n;
  t.previous = std::move(run_epoch(spec, p0, {image}).front());
  t.selected = std::move(run_epoch(spec, p1, {image}).front());
  t.next = std::move(run_epoch(spec, p2, {image}).front());
  t.composite = compose(t.previous, t.selected, t.next);
  return t;
}

void write_composite(const std::filesystem::path& path, const ImageF& composite) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png::write_gray16(path, composite);
}

ImageF read_composite(const std::filesystem::path& path) { return png::read_unit(path); }

}  // namespace lnseg
