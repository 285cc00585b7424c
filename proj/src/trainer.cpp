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

#include "lnseg/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <new>
#include <set>
#include <sstream>

#include "json.hpp"

#include "lnseg/checkpoint.hpp"
#include "lnseg/rng.hpp"

namespace lnseg {

using nlohmann::json;

std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::Bce: return "bce";
    case LossKind::Dice: return "dice";
    case LossKind::BceDice: return "bce_dice";
  }
  return "bce";
}

std::optional<LossKind> parse_loss(std::string_view text) {
  if (text == "bce") return LossKind::Bce;
  if (text == "dice") return LossKind::Dice;
  if (text == "bce_dice") return LossKind::BceDice;
  return std::nullopt;
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

std::optional<OptimizerKind> parse_optimizer(std::string_view text) {
  if (text == "adam") return OptimizerKind::Adam;
  if (text == "sgd") return OptimizerKind::Sgd;
  return std::nullopt;
}

namespace nn {

template <typename Scalar>
LossResult<Scalar> compute_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& target, LossKind kind,
                                bool want_grad) {
  if (!logits.same_shape(target)) throw Error(Errc::ShapeError, "loss: logits and target differ in shape");
  LossResult<Scalar> out;
  const Eigen::Index total = logits.size();
  const auto& z = logits.storage();
  const auto& t = target.storage();
  out.accuracy = ((z > Scalar(0)).template cast<Scalar>() == t).template cast<double>().mean();
  if (want_grad) out.grad = Tensor<Scalar>::zeros(logits.batch(), 1, logits.height(), logits.width());

  if (kind == LossKind::Bce || kind == LossKind::BceDice) {
    // max(z,0) - z t + log(1 + exp(-|z|)) is the overflow-safe form.
    const auto per_pixel = z.max(Scalar(0)) - z * t + (Scalar(1) + (-z.abs()).exp()).log();
    out.loss += per_pixel.template cast<double>().sum() / double(total);
    if (want_grad) {
      const auto p = Scalar(1) / (Scalar(1) + (-z).exp());
      out.grad.storage() += (p - t) / Scalar(total);
    }
  }
  if (kind == LossKind::Dice || kind == LossKind::BceDice) {
    constexpr double smooth = 1.0;
    const int n = logits.batch();
    const Eigen::Index plane = logits.plane();
    double dice_loss = 0.0;
    for (int b = 0; b < n; ++b) {
      using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
      Eigen::Map<const Arr> zb(logits.sample(b), plane);
      Eigen::Map<const Arr> tb(target.sample(b), plane);
      const Arr p = Scalar(1) / (Scalar(1) + (-zb).exp());
      const double inter = (p * tb).template cast<double>().sum();
      const double denom = p.template cast<double>().sum() + tb.template cast<double>().sum() + smooth;
      const double numer = 2.0 * inter + smooth;
      dice_loss += 1.0 - numer / denom;
      if (want_grad) {
        // d(1 - numer/denom)/dp = -(2 t denom - numer) / denom^2, averaged over samples
        Eigen::Map<Arr> gb(out.grad.sample(b), plane);
        const Arr dp = -(Scalar(2 * denom) * tb - Scalar(numer)) / Scalar(denom * denom * n);
        gb += dp * p * (Scalar(1) - p);
      }
    }
    out.loss += dice_loss / n;
  }
  return out;
}

template <typename Scalar>
Optimizer<Scalar>::Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {}

template <typename Scalar>
void Optimizer<Scalar>::step(const std::vector<Parameter<Scalar>*>& params) {
  ++t_;
  if (kind_ == OptimizerKind::Sgd) {
    for (auto* p : params) p->value -= Scalar(lr_) * p->grad;
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-7;
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (auto* p : params) {
      m_.push_back(Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(p->value.size()));
      v_.push_back(Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(p->value.size()));
    }
  }
  const double c1 = 1.0 - std::pow(b1, double(t_));
  const double c2 = 1.0 - std::pow(b2, double(t_));
  const Scalar step = Scalar(lr_ * std::sqrt(c2) / c1);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& g = params[i]->grad;
    m_[i] = Scalar(b1) * m_[i] + Scalar(1 - b1) * g;
    v_[i] = Scalar(b2) * v_[i] + Scalar(1 - b2) * g.square();
    params[i]->value -= step * m_[i] / (v_[i].sqrt() + Scalar(eps * std::sqrt(c2)));
  }
}

template LossResult<float> compute_loss<float>(const Tensor<float>&, const Tensor<float>&, LossKind, bool);
template LossResult<double> compute_loss<double>(const Tensor<double>&, const Tensor<double>&, LossKind, bool);
template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace nn

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw Error(Errc::SpecError, "learning_rate must be positive");
  if (max_epochs < 3) throw Error(Errc::SpecError, "max_epochs must be >= 3 for the epoch triplet");
  if (batch_size < 0) throw Error(Errc::SpecError, "batch_size must be positive (or 0 for auto)");
  if (!(val_fraction > 0 && val_fraction < 1)) throw Error(Errc::SpecError, "val_fraction must lie in (0,1)");
}

int TrainConfig::effective_batch_size(int dim) const {
  if (batch_size > 0) return batch_size;
  if (dim >= 2048) return 2;
  if (dim >= 1024) return 4;
  return 8;
}

TrainingSample make_training_sample(const ImageRecord& record) {
  if (!record.annotation) throw Error(Errc::SchemaError, record.image_id + " has no annotation");
  TrainingSample s;
  s.image_id = record.image_id;
  s.image = record.pixels;
  s.target = synthesize_nodule_mask(*record.annotation, record.dim, record.dim).mask;
  return s;
}

FoldSplit split_fold(const FoldPlan& plan, int fold, double val_fraction, std::uint64_t seed) {
  if (fold < 0 || fold >= plan.k) throw Error(Errc::RangeError, "fold index out of range");
  FoldSplit split;
  split.test = plan.members(fold);
  std::vector<std::string> pool = plan.complement(fold);  // sorted
  std::mt19937_64 rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(fold)));
  seeded_shuffle(pool, rng);
  auto n_val = static_cast<std::size_t>(std::ceil(val_fraction * double(pool.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, pool.size() > 1 ? pool.size() - 1 : 0);
  split.validation.assign(pool.begin(), pool.begin() + n_val);
  split.train.assign(pool.begin() + n_val, pool.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

namespace {

struct Batch {
  nn::Tensor<float> images, targets;
};

Batch gather(const std::vector<const TrainingSample*>& items) {
  const int dim = static_cast<int>(items.front()->image.rows());
  const int n = static_cast<int>(items.size());
  Batch b{nn::Tensor<float>(n, 1, dim, dim), nn::Tensor<float>(n, 1, dim, dim)};
  for (int i = 0; i < n; ++i) {
    const auto& s = *items[i];
    if (s.image.rows() != dim || s.target.rows() != dim) {
      throw Error(Errc::ShapeError, s.image_id + " is not at the batch resolution");
    }
    std::copy(s.image.data(), s.image.data() + s.image.size(), b.images.channel(i, 0));
    float* t = b.targets.channel(i, 0);
    for (Eigen::Index k = 0; k < s.target.size(); ++k) t[k] = s.target.data()[k] ? 1.0f : 0.0f;
  }
  return b;
}

std::string epoch_file(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%02d.ckpt", epoch);
  return buf;
}

json metrics_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch}, {"train_loss", m.train_loss}, {"val_loss", m.val_loss},
          {"train_acc", m.train_acc}, {"val_acc", m.val_acc}};
}

EpochMetrics metrics_from_json(const json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch");
  m.train_loss = j.at("train_loss");
  m.val_loss = j.at("val_loss");
  m.train_acc = j.at("train_acc");
  m.val_acc = j.at("val_acc");
  return m;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& metrics) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << "epoch,train_loss,val_loss,train_acc,val_acc\n";
  out << std::setprecision(9);
  for (const auto& m : metrics) {
    out << m.epoch << ',' << m.train_loss << ',' << m.val_loss << ',' << m.train_acc << ',' << m.val_acc << '\n';
  }
}

FoldResult train_fold(const nn::ModelSpec& spec, const std::vector<TrainingSample>& samples,
                      const FoldPlan& plan, int fold, const TrainConfig& cfg,
                      const std::filesystem::path& out_dir) {
  cfg.validate();
  spec.validate();
  FoldResult result;
  result.split = split_fold(plan, fold, cfg.val_fraction, cfg.seed);
  const FoldSplit& split = result.split;

  const std::set<std::string> test_ids(split.test.begin(), split.test.end());
  for (const auto& id : split.train) {
    if (test_ids.count(id)) throw Error(Errc::SpecError, "fold hygiene violated: " + id + " in train and test");
  }
  for (const auto& id : split.validation) {
    if (test_ids.count(id)) throw Error(Errc::SpecError, "fold hygiene violated: " + id + " in validation and test");
  }

  std::map<std::string, const TrainingSample*> by_id;
  for (const auto& s : samples) by_id[s.image_id] = &s;
  auto resolve = [&](const std::vector<std::string>& ids) {
    std::vector<const TrainingSample*> out;
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw Error(Errc::RangeError, "no training sample for " + id);
      out.push_back(it->second);
    }
    return out;
  };
  const auto train = resolve(split.train);
  const auto validation = resolve(split.validation);
  if (train.empty() || validation.empty()) throw Error(Errc::SpecError, "fold leaves no training or validation data");

  std::filesystem::create_directories(out_dir);
  const int batch = cfg.effective_batch_size(spec.input_dim);

  try {
    nn::EncoderDecoder<float> model(spec, cfg.seed);
    nn::Optimizer<float> optimizer(cfg.optimizer, cfg.learning_rate);
    auto params = model.parameters();
    std::mt19937_64 order_rng(derive_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(fold)));
    std::vector<std::size_t> order(train.size());

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      seeded_shuffle(order, order_rng);

      EpochMetrics m;
      m.epoch = epoch;
      double seen = 0;
      for (std::size_t start = 0; start < order.size(); start += batch) {
        std::vector<const TrainingSample*> items;
        for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i) items.push_back(train[order[i]]);
        Batch b = gather(items);
        model.zero_grad();
        nn::Tensor<float> logits = model.forward(b.images, nn::Mode::Train);
        auto loss = nn::compute_loss(logits, b.targets, cfg.loss, true);
        if (!std::isfinite(loss.loss)) {
          throw Error(Errc::NonFiniteLoss, "fold " + std::to_string(fold) + " epoch " + std::to_string(epoch) +
                                               " batch at " + std::to_string(start) + ": loss " +
                                               std::to_string(loss.loss) + " (learning rate " +
                                               std::to_string(cfg.learning_rate) + ")");
        }
        model.backward(loss.grad);
        optimizer.step(params);
        m.train_loss += loss.loss * items.size();
        m.train_acc += loss.accuracy * items.size();
        seen += items.size();
      }
      model.clear_cache();
      m.train_loss /= seen;
      m.train_acc /= seen;

      double vseen = 0;
      for (std::size_t start = 0; start < validation.size(); start += batch) {
        std::vector<const TrainingSample*> items(
            validation.begin() + start, validation.begin() + std::min(validation.size(), start + batch));
        Batch b = gather(items);
        auto loss = nn::compute_loss(model.forward(b.images, nn::Mode::Infer), b.targets, cfg.loss, false);
        m.val_loss += loss.loss * items.size();
        m.val_acc += loss.accuracy * items.size();
        vseen += items.size();
      }
      m.val_loss /= vseen;
      m.val_acc /= vseen;
      if (!std::isfinite(m.val_loss)) {
        throw Error(Errc::NonFiniteLoss, "validation loss is not finite at epoch " + std::to_string(epoch));
      }
      const auto path = out_dir / epoch_file(epoch);
      nn::save_checkpoint(path, model, epoch);
      result.checkpoints.push_back(path);
      result.metrics.push_back(m);
      spdlog::info("{} fold {} epoch {}/{}: train {:.5f} val {:.5f} val_acc {:.4f}", spec.name(), fold, epoch,
                   cfg.max_epochs, m.train_loss, m.val_loss, m.val_acc);
    }
  } catch (const std::bad_alloc&) {
    throw Error(Errc::ResourceError, "out of memory training " + spec.name() + " at " +
                                         std::to_string(spec.input_dim) + " with batch " + std::to_string(batch));
  }

  write_metrics_csv(out_dir / "metrics.csv", result.metrics);
  json side;
  side["model"] = {{"depth", spec.depth}, {"filters", spec.filters},
                   {"norm", std::string(nn::to_string(spec.norm_mode))}, {"input_dim", spec.input_dim}};
  side["seed"] = cfg.seed;
  side["fold"] = fold;
  side["metrics"] = json::array();
  for (const auto& m : result.metrics) side["metrics"].push_back(metrics_json(m));
  side["train_ids"] = split.train;
  side["validation_ids"] = split.validation;
  side["test_ids"] = split.test;
  std::ofstream(out_dir / "manifest.json") << side.dump(2) << '\n';
  return result;
}

int select_optimal_epoch(const std::vector<EpochMetrics>& metrics) {
  const int e = static_cast<int>(metrics.size());
  if (e < 3) throw Error(Errc::InsufficientHistory, "need at least 3 epochs, have " + std::to_string(e));
  int best = 1;
  double best_value = 0.0;
  for (int i = 0; i < e; ++i) {
    double sum = 0.0;
    int count = 0;
    for (int j = std::max(0, i - 1); j <= std::min(e - 1, i + 1); ++j) {
      sum += metrics[j].val_loss;
      ++count;
    }
    const double avg = sum / count;
    if (i == 0 || avg < best_value) {
      best_value = avg;
      best = i + 1;
    }
  }
  return std::clamp(best, 2, e - 1);
}

// ------------------------------------------------------------ matrix runner

std::string CellKey::experiment() const {
  return "ed" + std::to_string(depth) + "_" + std::to_string(resolution) + "_" + std::string(to_string(variant));
}

std::string CellKey::id() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "fold_%02d", fold);
  return experiment() + "/" + buf;
}

const CellRecord* Manifest::find(const CellKey& key) const {
  for (const auto& c : cells) {
    if (c.key == key) return &c;
  }
  return nullptr;
}

void Manifest::upsert(CellRecord record) {
  for (auto& c : cells) {
    if (c.key == record.key) {
      c = std::move(record);
      return;
    }
  }
  cells.push_back(std::move(record));
}

Manifest Manifest::load(const std::filesystem::path& path) {
  Manifest m;
  if (!std::filesystem::exists(path)) return m;
  std::ifstream in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedFile, path.string() + ": " + e.what());
  }
  m.schema_version = j.value("schema_version", 1);
  for (const auto& c : j.at("cells")) {
    CellRecord r;
    r.key.depth = c.at("depth");
    r.key.resolution = c.at("resolution");
    r.key.variant = parse_variant(c.at("variant").get<std::string>()).value_or(Variant::Raw);
    r.key.fold = c.at("fold");
    r.hash = c.value("hash", "");
    r.seed = c.value("seed", std::uint64_t{0});
    r.checkpoints = c.value("checkpoints", std::vector<std::string>{});
    for (const auto& e : c.value("metrics", json::array())) r.metrics.push_back(metrics_from_json(e));
    r.selected_epoch = c.value("selected_epoch", 0);
    r.train_ids = c.value("train_ids", std::vector<std::string>{});
    r.validation_ids = c.value("validation_ids", std::vector<std::string>{});
    r.test_ids = c.value("test_ids", std::vector<std::string>{});
    r.complete = c.value("complete", false);
    r.error = c.value("error", "");
    m.cells.push_back(std::move(r));
  }
  return m;
}

void Manifest::save(const std::filesystem::path& path) const {
  json j;
  j["schema_version"] = schema_version;
  j["cells"] = json::array();
  for (const auto& c : cells) {
    json e;
    e["cell"] = c.key.id();
    e["experiment"] = c.key.experiment();
    e["depth"] = c.key.depth;
    e["resolution"] = c.key.resolution;
    e["variant"] = std::string(to_string(c.key.variant));
    e["fold"] = c.key.fold;
    e["hash"] = c.hash;
    e["seed"] = c.seed;
    e["checkpoints"] = c.checkpoints;
    e["metrics"] = json::array();
    for (const auto& m : c.metrics) e["metrics"].push_back(metrics_json(m));
    e["selected_epoch"] = c.selected_epoch;
    e["train_ids"] = c.train_ids;
    e["validation_ids"] = c.validation_ids;
    e["test_ids"] = c.test_ids;
    e["complete"] = c.complete;
    if (!c.error.empty()) e["error"] = c.error;
    j["cells"].push_back(std::move(e));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw Error(Errc::IoError, "cannot write " + tmp.string());
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

std::vector<CellKey> MatrixGrid::cells() const {
  std::vector<CellKey> out;
  for (int d : depths)
    for (int r : resolutions)
      for (Variant v : variants)
        for (int f = 0; f < folds; ++f) out.push_back({d, r, v, f});
  return out;
}

MatrixOutcome run_matrix(const MatrixGrid& grid, const CellHasher& hasher, const CellRunner& runner,
                         const std::filesystem::path& manifest_path, bool resume) {
  MatrixOutcome outcome;
  outcome.manifest = resume ? Manifest::load(manifest_path) : Manifest{};
  for (const CellKey& key : grid.cells()) {
    const std::string hash = hasher(key);
    if (const CellRecord* prev = outcome.manifest.find(key); prev && prev->complete && prev->hash == hash) {
      const bool files_present = std::all_of(prev->checkpoints.begin(), prev->checkpoints.end(),
                                             [](const std::string& p) { return std::filesystem::exists(p); });
      if (files_present) {
        ++outcome.skipped;
        continue;
      }
    }
    CellRecord record;
    try {
      record = runner(key);
      record.key = key;
      record.hash = hash;
      record.complete = true;
      ++outcome.trained;
    } catch (const std::exception& e) {
      record = CellRecord{};
      record.key = key;
      record.hash = hash;
      record.complete = false;
      record.error = e.what();
      outcome.errors.push_back(key.id() + ": " + e.what());
      spdlog::error("cell {} failed: {}", key.id(), e.what());
    }
    outcome.manifest.upsert(std::move(record));
    outcome.manifest.save(manifest_path);
  }
  if (!std::filesystem::exists(manifest_path)) outcome.manifest.save(manifest_path);
  return outcome;
}

}  // namespace lnseg
