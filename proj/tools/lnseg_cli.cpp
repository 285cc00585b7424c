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

#include <spdlog/spdlog.h>

#include <chrono>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "lnseg/config.hpp"
#include "lnseg/ednet.hpp"
#include "lnseg/error.hpp"
#include "lnseg/pipeline.hpp"
#include "lnseg/rng.hpp"
#include "lnseg/synth.hpp"

namespace {

enum Exit { kOk = 0, kValidation = 1, kDependency = 2, kRuntime = 3 };

int exit_code_for(lnseg::Errc code) {
  using lnseg::Errc;
  switch (code) {
    case Errc::ConfigError:
    case Errc::SpecError:
    case Errc::SchemaError:
    case Errc::RangeError:
    case Errc::CurationListMissing:
    case Errc::LabelError:
    case Errc::DuplicateId:
    case Errc::SpecMismatch:
      return kValidation;
    case Errc::StageDependencyError:
    case Errc::MissingCheckpoint:
      return kDependency;
    default:
      return kRuntime;
  }
}

struct RunFlags {
  std::string config;
  std::string stage = "all";
  std::optional<std::uint64_t> seed;
  std::string out;
  bool resume = true;
  int devices = 1;
};

lnseg::ExperimentConfig load_config(const RunFlags& f) {
  auto cfg = lnseg::ExperimentConfig::load(f.config);
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.train.seed = *f.seed;
  }
  if (!f.out.empty()) cfg.output_root = f.out;
  return cfg;
}

void print_stage(const char* name, const lnseg::StageSummary& s) {
  std::cout << name << ": " << s.work_done << " done, " << s.skipped << " up to date\n";
}

int cmd_validate(const RunFlags& f) {
  const auto cfg = load_config(f);
  const auto rep = lnseg::validate_experiment(cfg);
  std::cout << rep.text();
  return rep.ok() ? kOk : kValidation;
}

int cmd_run(const RunFlags& f) {
  const auto stage = lnseg::parse_stage(f.stage);
  if (!stage) {
    std::cerr << "unknown stage '" << f.stage << "'\n";
    return kValidation;
  }
  const auto cfg = load_config(f);
  const auto issues = cfg.validate();
  if (!issues.empty()) {
    for (const auto& i : issues) std::cerr << "config: " << i << "\n";
    return kValidation;
  }
  lnseg::Pipeline pipeline(cfg, {f.resume, f.devices});
  const auto summary = pipeline.run(*stage);
  print_stage(f.stage.c_str(), summary);
  std::cout << "outputs: " << pipeline.root().string() << "\n";
  return kOk;
}

int cmd_external(const RunFlags& f, const std::string& manifest) {
  const auto cfg = load_config(f);
  const auto issues = cfg.validate();
  if (!issues.empty()) {
    for (const auto& i : issues) std::cerr << "config: " << i << "\n";
    return kValidation;
  }
  const std::filesystem::path m = manifest.empty() ? cfg.output_root / "models" / "manifest.json" : std::filesystem::path(manifest);
  const auto r = lnseg::external_test(cfg, m);
  std::printf("%s on %d external images, %d fold models%s\n", r.experiment.c_str(), r.images, r.folds,
              r.interpolated ? " (interpolated input)" : "");
  std::printf("sensitivity %.1f%% at %.2f FP/image\n", r.pooled.sensitivity, r.pooled.fp_per_image);
  std::printf("tables: %s\n", r.out_dir.string().c_str());
  return kOk;
}

int cmd_count(int depth, int dim, int base, bool dump) {
  std::vector<int> depths = depth ? std::vector<int>{depth} : std::vector<int>{5, 6, 7};
  for (int d : depths) {
    const auto spec = lnseg::nn::ModelSpec::scaled(d, dim, base);
    if (dump) {
      lnseg::nn::EncoderDecoder<float> model(spec);
      std::printf("# %s filters", spec.name().c_str());
      for (int f : spec.filters) std::printf(" %d", f);
      std::printf("\n");
      for (const auto& l : model.layer_counts()) {
        std::string shape;
        for (std::size_t i = 0; i < l.shape.size(); ++i) shape += (i ? "x" : "") + std::to_string(l.shape[i]);
        std::printf("%-40s %-16s %12lld\n", l.name.c_str(), shape.c_str(), static_cast<long long>(l.count));
      }
      std::printf("%s total %lld\n\n", spec.name().c_str(), static_cast<long long>(model.parameter_count()));
    } else {
      std::printf("%s %lld\n", spec.name().c_str(), static_cast<long long>(lnseg::nn::count_parameters(spec)));
    }
  }
  return kOk;
}

int cmd_benchmark(int depth, int dim, int base, int repeat) {
  const auto spec = lnseg::nn::ModelSpec::scaled(depth, dim, base);
  spec.validate();
  lnseg::nn::EncoderDecoder<float> model(spec, 1);
  std::mt19937_64 rng(7);
  lnseg::ImageF img(dim, dim);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<float>(lnseg::unit_uniform(rng));
  model.predict(img);  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < repeat; ++i) model.predict(img);
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / std::max(repeat, 1);
  std::printf("%s at %dx%d: %.1f ms per image (wall clock, this machine only)\n", spec.name().c_str(), dim, dim, ms);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lung nodule localisation with residual encoder-decoder networks"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  RunFlags flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "Override the config seed");
    sub->add_option("--out", flags.out, "Override the output root");
  };

  auto* validate = app.add_subcommand("validate", "Check a config and report the experiment grid");
  add_common(validate);

  auto* run = app.add_subcommand("run", "Run one pipeline stage or all of them");
  add_common(run);
  run->add_option("--stage", flags.stage, "ingest|preprocess|train|ensemble|rate|sweep|report|all");
  run->add_flag("--resume,!--no-resume", flags.resume, "Skip work recorded as complete (default on)");
  run->add_option("--devices", flags.devices, "Compute devices to schedule cells on")->check(CLI::PositiveNumber);

  std::string manifest;
  auto* external = app.add_subcommand("external-test", "Rate trained fold models on the external dataset");
  add_common(external);
  external->add_option("--manifest", manifest, "Training manifest (default: <out>/models/manifest.json)");

  lnseg::SyntheticSpec synth_spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic desk-scale dataset with a config");
  synth->add_option("--out", synth_out, "Destination directory")->required();
  synth->add_option("--count", synth_spec.count, "Images");
  synth->add_option("--dim", synth_spec.dim, "Image side in pixels");
  synth->add_option("--seed", synth_spec.seed, "Generator seed");

  int depth = 0, base = 16, repeat = 1;
  bool dump = false;
  auto* count = app.add_subcommand("count-params", "Trainable parameter counts per depth");
  count->add_option("--depth", depth, "Only this depth (default 5, 6 and 7)");
  count->add_option("--base", base, "Filters at the first level");
  count->add_flag("--dump", dump, "Per-layer breakdown");

  int bench_depth = 5, bench_dim = 512, bench_base = 16;
  auto* bench = app.add_subcommand("benchmark", "Time inference on one random image");
  bench->add_option("--depth", bench_depth, "Network depth");
  bench->add_option("--dim", bench_dim, "Image side");
  bench->add_option("--base", bench_base, "Filters at the first level");
  bench->add_option("--repeat", repeat, "Timed repetitions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*validate) return cmd_validate(flags);
    if (*run) return cmd_run(flags);
    if (*external) return cmd_external(flags, manifest);
    if (*synth) {
      lnseg::write_synthetic_dataset(synth_spec, synth_out);
      std::cout << "wrote " << synth_spec.count << " images to " << synth_out << "\n";
      return kOk;
    }
    if (*count) return cmd_count(depth, 2048, base, dump);
    if (*bench) return cmd_benchmark(bench_depth, bench_dim, bench_base, repeat);
  } catch (const lnseg::Error& e) {
    std::cerr << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
