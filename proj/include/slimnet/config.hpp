// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SLIMNET_CONFIG_HPP_
#define SLIMNET_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "slimnet/arch.hpp"
#include "slimnet/data.hpp"
#include "slimnet/train.hpp"
#include "slimnet/width.hpp"

namespace slimnet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "idx"
  std::optional<std::uint64_t> seed;  // synthetic only; defaults to the run seed
  Index train_size = 1000;
  Index test_size = 2000;
  int classes = 10;
  int resolution = 32;
  SynthOptions synth{};
  std::string train_images, train_labels, test_images, test_labels;  // idx only
  Augment augment{};
};

struct OptimConfig {
  double lr = 0.15;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  std::string schedule = "linear";  // constant | exponential | linear | step
  double gamma = 0.98;
  std::vector<int> milestones;
  double factor = 0.1;
};

/// Everything a run depends on. Defaults describe the desk-scale experiment.
struct RunConfig {
  std::string arch = "desknet";
  SwitchableWidthList widths{0.25, 0.5, 0.75, 1.0};
  std::optional<int> rounding_divisor;  // absent: the architecture's own
  BNMode bn_mode = BNMode::private_all;
  TrainMode mode = TrainMode::slimmable;
  OptimConfig optim{};
  DataConfig data{};
  std::uint64_t seed = 1;
  int epochs = 12;
  Index batch_size = 64;
  bool eval_each_epoch = true;  // else only after the last epoch
  std::string output_dir = "runs/default";

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
  /// Naive mode always trains with one shared batch norm.
  BNMode effective_bn_mode() const { return mode == TrainMode::naive ? BNMode::naive_shared : bn_mode; }
  LRSchedule schedule() const;
  SGDConfig sgd() const;
};

/**
 * Applies the keys of a JSON object on top of `base`. Nested objects
 * ("optim", "data", "data.synth", "data.augment") merge key by key. Unknown
 * keys and wrongly typed values throw ConfigError.
 */
RunConfig apply_config_json(RunConfig base, std::string_view text);
RunConfig load_config(const std::filesystem::path& path, const RunConfig& base = {});

/// Canonical JSON: every field, sorted keys, fixed formatting.
std::string config_to_json(const RunConfig& cfg);
/// FNV-1a 64 of the canonical JSON, as 16 hex digits.
std::string run_hash(const RunConfig& cfg);

ArchSpec build_run_arch(const RunConfig& cfg, int in_channels, int classes, int resolution);

struct Datasets {
  Dataset train;
  Dataset test;
};

/// Builds or loads the train/test pair; the test split uses the train statistics.
Datasets load_datasets(const RunConfig& cfg);

struct TrainedModel {
  SlimmableNet<float> model;
  std::optional<double> width;  // set for individually trained models
};

struct RunOutcome {
  std::vector<TrainedModel> models;
  TrainReport report;
  /// Final per-switch errors, ascending width.
  std::vector<std::pair<double, double>> test_errors;
  std::vector<std::pair<double, double>> train_errors;
  std::string hash;
};

/**
 * Runs the configured training mode. Slimmable and naive train all switches
 * jointly; individual trains one single-switch model per width; incremental
 * takes exactly two widths, base then extended.
 */
RunOutcome run_training(const RunConfig& cfg, const Datasets& data,
                        const std::function<void(const ReportRow&)>& on_row = {});

}  // namespace slimnet

#endif  // SLIMNET_CONFIG_HPP_
