// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SLIMNET_MODEL_HPP_
#define SLIMNET_MODEL_HPP_

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "slimnet/arch.hpp"
#include "slimnet/ops.hpp"
#include "slimnet/switchable_bn.hpp"
#include "slimnet/tensor.hpp"
#include "slimnet/width.hpp"

namespace slimnet {

/**
 * Runs a width-parameterized convolution on the leading [w_out, w_in/groups]
 * block of its full-width weight. Inactive weights get no gradient.
 */
template <typename Scalar>
Tensor<Scalar> slim_conv_forward(const ConvSpec& spec, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                                 const Tensor<Scalar>& x, int w_in, int w_out) {
  if (w_in < 1 || w_out < 1 || w_in > spec.max_in || w_out > spec.max_out) {
    throw ShapeError("layer " + spec.name + ": active slice " + std::to_string(w_out) + "x" + std::to_string(w_in) +
                     " exceeds maximum " + std::to_string(spec.max_out) + "x" + std::to_string(spec.max_in));
  }
  if (x.rank() != 4 || x.dim(1) != w_in) {
    throw ShapeError("layer " + spec.name + ": input " + shape_str(x.shape()) + " does not carry " +
                     std::to_string(w_in) + " channels");
  }
  Index groups = 1;
  if (spec.mode == ConvMode::depthwise) {
    if (w_in != w_out) throw ShapeError("depthwise layer " + spec.name + ": active in != active out");
    groups = w_in;
  } else if (spec.mode == ConvMode::group) {
    groups = spec.groups;
  }
  const Tensor<Scalar> w = slice_prefix(weight, Shape{w_out, w_in / groups, weight.dim(2), weight.dim(3)});
  const Tensor<Scalar> b = bias.defined() ? slice_prefix(bias, Shape{w_out}) : Tensor<Scalar>();
  return conv2d(x, w, b, Conv2dOptions{spec.stride, spec.pad, groups});
}

template <typename Scalar>
Tensor<Scalar> slim_linear_forward(const LinearSpec& spec, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                                   const Tensor<Scalar>& x, int w_in, int w_out) {
  if (w_in < 1 || w_out < 1 || w_in > spec.max_in || w_out > spec.max_out) {
    throw ShapeError("layer " + spec.name + ": active slice exceeds maximum");
  }
  if (x.rank() != 2 || x.dim(1) != w_in) {
    throw ShapeError("layer " + spec.name + ": input " + shape_str(x.shape()) + " does not carry " +
                     std::to_string(w_in) + " features");
  }
  const Tensor<Scalar> w = slice_prefix(weight, Shape{w_out, w_in});
  const Tensor<Scalar> b = bias.defined() ? slice_prefix(bias, Shape{w_out}) : Tensor<Scalar>();
  return linear(x, w, b);
}

/**
 * A single weight-shared network executable at every width of its switch list.
 *
 * Conv/FC weights live at full width; switch_to() selects the active channel
 * prefixes and the batch-norm switch. Copies would alias tensors, so the type
 * is move-only; clone() makes an independent deep copy.
 */
template <typename Scalar>
class SlimmableNet {
 public:
  struct Layer {
    Tensor<Scalar> weight;
    Tensor<Scalar> bias;
    std::optional<SwitchableBN<Scalar>> bn;
  };

  using Param = Parameter<Scalar>;

  SlimmableNet(ArchSpec arch, SwitchableWidthList widths, BNMode mode, std::uint64_t seed)
      : arch_(std::move(arch)), widths_(std::move(widths)), mode_(mode) {
    arch_.validate();
    for (const auto& w : widths_) switch_widths_.push_back(layer_widths(arch_, w));
    std::mt19937_64 rng(seed);
    layers_.resize(arch_.layers.size());
    for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
      Layer& layer = layers_[i];
      if (const auto* c = std::get_if<ConvSpec>(&arch_.layers[i])) {
        const int per_group_in = c->mode == ConvMode::depthwise ? 1
                                 : c->mode == ConvMode::group   ? c->max_in / c->groups
                                                                : c->max_in;
        layer.weight = Tensor<Scalar>(Shape{c->max_out, per_group_in, c->kernel, c->kernel}, Scalar(0), true);
        // Kaiming normal, fan-out mode.
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (c->max_out * c->kernel * c->kernel)));
        for (Index k = 0; k < layer.weight.numel(); ++k) layer.weight.data()[k] = static_cast<Scalar>(dist(rng));
        if (c->has_bias) layer.bias = Tensor<Scalar>(Shape{c->max_out}, Scalar(0), true);
      } else if (const auto* l = std::get_if<LinearSpec>(&arch_.layers[i])) {
        layer.weight = Tensor<Scalar>(Shape{l->max_out, l->max_in}, Scalar(0), true);
        std::normal_distribution<double> dist(0.0, 0.01);
        for (Index k = 0; k < layer.weight.numel(); ++k) layer.weight.data()[k] = static_cast<Scalar>(dist(rng));
        if (l->has_bias) layer.bias = Tensor<Scalar>(Shape{l->max_out}, Scalar(0), true);
      } else if (const auto* b = std::get_if<BatchNormSpec>(&arch_.layers[i])) {
        std::vector<int> per_switch;
        for (const auto& sw : switch_widths_) per_switch.push_back(sw[i].out);
        layer.bn.emplace(b->channels, std::move(per_switch), mode_);
      }
    }
    switch_index_ = widths_.size() - 1;
  }

  SlimmableNet(SlimmableNet&&) noexcept = default;
  SlimmableNet& operator=(SlimmableNet&&) noexcept = default;
  SlimmableNet(const SlimmableNet&) = delete;
  SlimmableNet& operator=(const SlimmableNet&) = delete;

  SlimmableNet clone() const { return cast<Scalar>(); }

  /// Deep copy at another scalar precision (e.g. a 64-bit shadow for checks).
  template <typename Other>
  SlimmableNet<Other> cast() const {
    SlimmableNet<Other> out(arch_, widths_, mode_, 0);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& src = layers_[i];
      auto& dst = out.layer(i);
      auto copy_into = [](const Tensor<Scalar>& from, Tensor<Other>& to) {
        if (from.defined()) to.data() = from.data().template cast<Other>();
      };
      copy_into(src.weight, dst.weight);
      copy_into(src.bias, dst.bias);
      if (src.bn) {
        for (std::size_t k = 0; k < src.bn->gamma_slots().size(); ++k) {
          copy_into(src.bn->gamma_slots()[k], dst.bn->gamma_slots()[k]);
          copy_into(src.bn->beta_slots()[k], dst.bn->beta_slots()[k]);
        }
        for (std::size_t k = 0; k < src.bn->stat_slots().size(); ++k) {
          dst.bn->stat_slots()[k].mean = src.bn->stat_slots()[k].mean.template cast<Other>();
          dst.bn->stat_slots()[k].var = src.bn->stat_slots()[k].var.template cast<Other>();
        }
        dst.bn->set_frozen(src.bn->frozen());
      }
    }
    out.switch_to(width());
    out.set_training(training_);
    return out;
  }

  const ArchSpec& arch() const { return arch_; }
  const SwitchableWidthList& widths() const { return widths_; }
  BNMode bn_mode() const { return mode_; }

  /// Activates width w everywhere: channel prefixes and the batch-norm switch. Idempotent.
  void switch_to(WidthMultiplier w) { switch_index_ = widths_.index_of(w); }
  std::size_t switch_index() const { return switch_index_; }
  WidthMultiplier width() const { return widths_[switch_index_]; }
  const std::vector<LayerWidth>& active_widths() const { return switch_widths_[switch_index_]; }
  const std::vector<LayerWidth>& active_widths(std::size_t s) const { return switch_widths_.at(s); }

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  void set_bn_frozen(bool on) {
    for (auto& l : layers_) {
      if (l.bn) l.bn->set_frozen(on);
    }
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    if (x.rank() != 4 || x.dim(1) != arch_.in_channels) {
      throw ShapeError("model expects [N," + std::to_string(arch_.in_channels) + ",H,W] input, got " +
                       shape_str(x.shape()));
    }
    const auto& lw = active_widths();
    Tensor<Scalar> h = x;
    std::vector<Tensor<Scalar>> skips;
    for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
      Layer& layer = layers_[i];
      std::visit(
          [&](const auto& spec) {
            using T = std::decay_t<decltype(spec)>;
            if constexpr (std::is_same_v<T, ConvSpec>) {
              h = slim_conv_forward(spec, layer.weight, layer.bias, h, lw[i].in, lw[i].out);
            } else if constexpr (std::is_same_v<T, BatchNormSpec>) {
              h = layer.bn->forward(h, switch_index_, training_);
            } else if constexpr (std::is_same_v<T, ReluSpec>) {
              h = relu(h);
            } else if constexpr (std::is_same_v<T, GlobalPoolSpec>) {
              h = global_avg_pool(h);
            } else if constexpr (std::is_same_v<T, LinearSpec>) {
              if (h.rank() == 4) h = Tensor<Scalar>(Shape{h.dim(0), h.numel() / h.dim(0)}, h.data());
              h = slim_linear_forward(spec, layer.weight, layer.bias, h, lw[i].in, lw[i].out);
            } else if constexpr (std::is_same_v<T, ResidualBeginSpec>) {
              skips.push_back(h);
            } else if constexpr (std::is_same_v<T, ResidualAddSpec>) {
              h = add(h, skips.back());
              skips.pop_back();
            }
          },
          arch_.layers[i]);
    }
    return h;
  }

  std::size_t num_layers() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return layers_.at(i); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }

  /// Every learnable tensor, in layer order.
  std::vector<Param> parameters() const {
    std::vector<Param> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      const std::string name = layer_name(i);
      if (l.weight.defined()) out.push_back({name + ".weight", l.weight, true});
      if (l.bias.defined()) out.push_back({name + ".bias", l.bias, false});
      if (l.bn) {
        const auto ps = l.bn->parameters();
        for (std::size_t k = 0; k < ps.size(); ++k) {
          out.push_back({name + (k % 2 ? ".beta" : ".gamma") + std::to_string(k / 2), ps[k], false});
        }
      }
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }

  std::string layer_name(std::size_t i) const {
    return std::visit(
        [i](const auto& spec) -> std::string {
          if constexpr (requires { spec.name; }) {
            return spec.name;
          } else {
            return "layer" + std::to_string(i);
          }
        },
        arch_.layers.at(i));
  }

 private:
  ArchSpec arch_;
  SwitchableWidthList widths_;
  BNMode mode_;
  std::vector<std::vector<LayerWidth>> switch_widths_;
  std::vector<Layer> layers_;
  std::size_t switch_index_ = 0;
  bool training_ = true;
};

}  // namespace slimnet

#endif  // SLIMNET_MODEL_HPP_
