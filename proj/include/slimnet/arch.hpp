// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SLIMNET_ARCH_HPP_
#define SLIMNET_ARCH_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "slimnet/width.hpp"

namespace slimnet {

enum class ConvMode { normal, depthwise, group };

/// Convolution stored at [max_out, max_in/groups, k, k]; active channels are prefixes.
struct ConvSpec {
  std::string name;
  int max_in = 0;
  int max_out = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  ConvMode mode = ConvMode::normal;
  int groups = 1;  // used by ConvMode::group
  bool has_bias = false;
  bool slim_in = true;
  bool slim_out = true;
};

struct BatchNormSpec {
  std::string name;
  int channels = 0;
};

struct ReluSpec {};
struct GlobalPoolSpec {};

/// Fully connected layer; the classifier head keeps slim_out = false.
struct LinearSpec {
  std::string name;
  int max_in = 0;
  int max_out = 0;
  bool has_bias = true;
  bool slim_in = true;
  bool slim_out = false;
};

/// Saves the current activation for a later ResidualAddSpec.
struct ResidualBeginSpec {};
struct ResidualAddSpec {};

using LayerSpec =
    std::variant<ConvSpec, BatchNormSpec, ReluSpec, GlobalPoolSpec, LinearSpec, ResidualBeginSpec, ResidualAddSpec>;

struct ArchSpec {
  std::string name;
  int in_channels = 3;
  int resolution = 32;
  int classes = 10;
  ChannelRounding rounding;
  std::vector<LayerSpec> layers;

  /// Checks channel consistency at full width and that there is exactly one classifier head.
  void validate() const;
};

/// Active (in, out) channels of one layer at some width; zero for parameterless layers.
struct LayerWidth {
  int in = 0;
  int out = 0;
  int groups = 1;
};

/// Per-layer active channels at width w, propagated through the layer list.
std::vector<LayerWidth> layer_widths(const ArchSpec& arch, WidthMultiplier w);

/// Standard MobileNet v1 (ReLU after every BN, no conv bias, FC head with bias).
ArchSpec build_mobilenet_v1(int classes = 1000, int resolution = 224);

/**
 * Desk-scale network: 3x3/2 stem to 16, depthwise-separable blocks 16->32 and
 * 32->64 (stride 2 on the second), one two-conv residual block at 64, global
 * pooling and an FC head.
 */
ArchSpec build_desknet(int in_channels = 3, int classes = 10, int resolution = 32);

/// Builds an architecture by name ("mobilenet_v1" or "desknet").
ArchSpec build_arch(std::string_view name, int in_channels, int classes, int resolution);

/// Standalone architecture whose full width equals `arch` at width w.
ArchSpec scale_arch(const ArchSpec& arch, WidthMultiplier w);

enum class ParamConvention { merged_bn, training };
enum class BNMode { private_all, shared_scale_bias, naive_shared };

struct ParamCount {
  std::int64_t conv_fc = 0;
  std::int64_t bn = 0;
  double bn_fraction() const {
    return conv_fc + bn == 0 ? 0.0 : static_cast<double>(bn) / static_cast<double>(conv_fc + bn);
  }
};

/**
 * Parameter counts at width w. merged_bn counts 2 per BN channel (scale and
 * shift after folding); training counts gamma, beta, mean and var for every
 * stored switch copy at full width, according to the BN mode.
 */
ParamCount count_params(const ArchSpec& arch, WidthMultiplier w = WidthMultiplier(1.0),
                        ParamConvention convention = ParamConvention::merged_bn, std::size_t num_switches = 1,
                        BNMode mode = BNMode::private_all);

/// BN parameters of one switch at full width, 2 per channel.
std::int64_t count_bn_params(const ArchSpec& arch);

/// Multiply-adds of conv and FC layers at width w; BN, activations and pooling count zero.
std::int64_t count_flops(const ArchSpec& arch, WidthMultiplier w, int input_resolution);

std::string to_string(ConvMode mode);
std::string to_string(BNMode mode);
BNMode parse_bn_mode(std::string_view text);

/// Deterministic JSON encoding used by checkpoints and configs.
std::string arch_to_json(const ArchSpec& arch);
ArchSpec arch_from_json(std::string_view text);

}  // namespace slimnet

#endif  // SLIMNET_ARCH_HPP_
