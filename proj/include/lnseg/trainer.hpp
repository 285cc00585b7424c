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
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lnseg/dataio.hpp"
#include "lnseg/ednet.hpp"
#include "lnseg/preprocess.hpp"

namespace lnseg {

enum class LossKind { Bce, Dice, BceDice };
enum class OptimizerKind { Adam, Sgd };

std::string_view to_string(LossKind k);
std::optional<LossKind> parse_loss(std::string_view text);
std::string_view to_string(OptimizerKind k);
std::optional<OptimizerKind> parse_optimizer(std::string_view text);

namespace nn {

template <typename Scalar>
struct LossResult {
  double loss = 0.0;
  double accuracy = 0.0;  // per-pixel, threshold 0.5
  Tensor<Scalar> grad;    // dL/dlogits, empty unless requested
};

/// Loss averaged over every pixel of the batch (BCE) or over samples (soft
/// Dice, smoothing 1). Targets are {0,1}.
template <typename Scalar>
LossResult<Scalar> compute_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& target, LossKind kind,
                                bool want_grad);

/// Adam (beta 0.9/0.999, epsilon 1e-7) or plain SGD over a model's parameters.
template <typename Scalar>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate);
  void step(const std::vector<Parameter<Scalar>*>& params);

 private:
  OptimizerKind kind_;
  double lr_;
  std::int64_t t_ = 0;
  std::vector<Eigen::Array<Scalar, Eigen::Dynamic, 1>> m_, v_;
};

}  // namespace nn

struct TrainConfig {
  double learning_rate = 1e-5;
  int max_epochs = 25;
  int batch_size = 0;  // 0 selects by resolution, see effective_batch_size
  LossKind loss = LossKind::Bce;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;

  void validate() const;
  /// 2 at 2048^2, 4 at 1024^2, 8 at 512^2 and below unless set explicitly.
  int effective_batch_size(int dim) const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0, val_loss = 0;
  double train_acc = 0, val_acc = 0;
};

/// One image with its nodule target at training resolution.
struct TrainingSample {
  std::string image_id;
  ImageF image;
  Mask target;
};

/// Image plus circle target, both at record.dim.
TrainingSample make_training_sample(const ImageRecord& record);

struct FoldSplit {
  std::vector<std::string> train, validation, test;
};

/// Test ids are the fold's members; validation is a seeded carve-out of
/// val_fraction (at least one id) from the remaining folds.
FoldSplit split_fold(const FoldPlan& plan, int fold, double val_fraction, std::uint64_t seed);

struct FoldResult {
  std::vector<std::filesystem::path> checkpoints;  // index e-1 holds epoch e
  std::vector<EpochMetrics> metrics;
  FoldSplit split;
};

/// Trains one fold for max_epochs and writes epoch_NN.ckpt per epoch plus
/// metrics.csv and manifest.json into `out_dir`. Throws NonFiniteLoss on a
/// NaN/inf loss, ResourceError when allocation fails.
FoldResult train_fold(const nn::ModelSpec& spec, const std::vector<TrainingSample>& samples,
                      const FoldPlan& plan, int fold, const TrainConfig& cfg,
                      const std::filesystem::path& out_dir);

/// Argmin of the 3-epoch centred moving average of validation loss (window
/// truncated at the ends), clamped to [2, E-1]; ties go to the earlier
/// epoch. Needs at least three epochs (InsufficientHistory).
int select_optimal_epoch(const std::vector<EpochMetrics>& metrics);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& metrics);

// ------------------------------------------------------------ matrix runner

struct CellKey {
  int depth = 5;
  int resolution = 512;
  Variant variant = Variant::Raw;
  int fold = 0;

  /// "ed5_512_he_seg"
  std::string experiment() const;
  /// "ed5_512_he_seg/fold_03"
  std::string id() const;
  bool operator==(const CellKey&) const = default;
};

struct CellRecord {
  CellKey key;
  std::string hash;
  std::uint64_t seed = 0;
  std::vector<std::string> checkpoints;
  std::vector<EpochMetrics> metrics;
  int selected_epoch = 0;
  std::vector<std::string> train_ids, validation_ids, test_ids;
  bool complete = false;
  std::string error;
};

struct Manifest {
  int schema_version = 1;
  std::vector<CellRecord> cells;

  const CellRecord* find(const CellKey& key) const;
  void upsert(CellRecord record);

  static Manifest load(const std::filesystem::path& path);  // empty when absent
  void save(const std::filesystem::path& path) const;
};

struct MatrixGrid {
  std::vector<int> depths;
  std::vector<int> resolutions;
  std::vector<Variant> variants;
  int folds = 10;

  /// Row-major over depth, resolution, variant, fold.
  std::vector<CellKey> cells() const;
};

struct MatrixOutcome {
  Manifest manifest;
  int trained = 0;
  int skipped = 0;
  std::vector<std::string> errors;  // "cell id: message"
};

using CellRunner = std::function<CellRecord(const CellKey&)>;
using CellHasher = std::function<std::string(const CellKey&)>;

/// Trains every cell not already complete in the manifest under the same
/// hash (with its checkpoints on disk). Each finished or failed cell is
/// written through to `manifest_path`; failures are collected and the
/// remaining cells still run.
MatrixOutcome run_matrix(const MatrixGrid& grid, const CellHasher& hasher, const CellRunner& runner,
                         const std::filesystem::path& manifest_path, bool resume = true);

}  // namespace lnseg
