// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SLIMNET_DEPLOY_HPP_
#define SLIMNET_DEPLOY_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "slimnet/model.hpp"

namespace slimnet {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training metadata carried by a checkpoint.
struct CheckpointMeta {
  std::uint64_t seed = 0;
  int epochs = 0;
  std::string mode;
  std::string run_hash;
  std::map<std::string, double> final_errors;  // width string -> test error
  std::string curves_csv;                      // training curves, as written by TrainReport::write_csv
};

struct Checkpoint {
  SlimmableNet<float> model;
  CheckpointMeta meta;
};

/**
 * Binary checkpoint: "SLIMCKPT", u32 version, then little-endian sections
 * ARCH (JSON), WDTH (widths), BNMD (mode), PARM (named f32 tensors), STAT
 * (per-switch moving statistics) and META (JSON). Encoding is deterministic,
 * so save -> load -> save reproduces the same bytes.
 */
std::string encode_checkpoint(const SlimmableNet<float>& model, const CheckpointMeta& meta);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const SlimmableNet<float>& model, const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// One layer of an exported plain network.
struct FusedLayer {
  enum class Kind { conv, relu, pool, linear, residual_begin, residual_add };
  Kind kind = Kind::relu;
  std::string name;
  Tensor<float> weight;
  Tensor<float> bias;
  int stride = 1;
  int pad = 0;
  int groups = 1;
  bool folded_bn = false;  // bias holds a folded batch-norm shift
};

/// A standalone, non-slimmable inference network with batch norms folded into convolutions.
struct FusedNet {
  std::string arch_name;
  double width = 1.0;
  int in_channels = 3;
  int resolution = 32;
  int classes = 10;
  std::vector<FusedLayer> layers;

  Tensor<float> forward(const Tensor<float>& x) const;
  /// Conv/FC parameters, and the 2-per-channel folded batch-norm parameters.
  ParamCount param_count() const;
};

/// Slices switch w out of the model and folds every batch norm into its convolution.
FusedNet export_fused(const SlimmableNet<float>& model, WidthMultiplier w);

std::string encode_fused(const FusedNet& net);
FusedNet decode_fused(std::string_view bytes);
void save_fused(const std::filesystem::path& path, const FusedNet& net);
FusedNet load_fused(const std::filesystem::path& path);

struct LatencyStats {
  double width = 1.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  int count = 0;
  Shape input_shape;
};

struct LatencyProfile {
  std::vector<LatencyStats> entries;  // ascending width
  bool monotone = true;               // median latency non-decreasing in width
  std::vector<std::string> warnings;

  std::string to_json() const;
  static LatencyProfile from_json(std::string_view text);
};

/// Median and nearest-rank 95th percentile of samples (milliseconds).
LatencyStats summarize_latency(std::vector<double> samples_ms, double width, Shape input_shape);

/**
 * Times net.forward on a fixed random input: `warmup` untimed runs, then
 * `reps` timed runs. With threads > 1 the batch is split across threads.
 */
LatencyStats benchmark(const FusedNet& net, const Shape& input_shape, int warmup, int reps, int threads = 1);

/// Benchmarks every switch of the model; a non-monotone profile is flagged with a warning.
LatencyProfile profile_switches(const SlimmableNet<float>& model, const Shape& input_shape, int warmup, int reps,
                                int threads = 1);

struct Selection {
  double width = 1.0;
  double median_ms = 0.0;
  bool budget_infeasible = false;
};

/// Widest switch whose median latency fits the budget; else the narrowest, flagged infeasible.
Selection select_switch(const LatencyProfile& profile, double budget_ms);

}  // namespace slimnet

#endif  // SLIMNET_DEPLOY_HPP_
