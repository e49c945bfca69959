// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SLIMNET_SWITCHABLE_BN_HPP_
#define SLIMNET_SWITCHABLE_BN_HPP_

#include <cstddef>
#include <utility>
#include <vector>

#include "slimnet/arch.hpp"
#include "slimnet/ops.hpp"
#include "slimnet/tensor.hpp"

namespace slimnet {

/// Per-channel affine equivalent of an inference-mode batch norm.
template <typename Scalar>
struct FusedAffine {
  typename Tensor<Scalar>::Array scale;  // gamma / sqrt(var + eps)
  typename Tensor<Scalar>::Array shift;  // beta - scale * mean
};

template <typename Scalar, typename A>
FusedAffine<Scalar> fuse_bn(const A& gamma, const A& beta, const A& mean, const A& var, Scalar eps) {
  if (gamma.size() != beta.size() || gamma.size() != mean.size() || gamma.size() != var.size()) {
    throw ShapeError("fuse_bn: parameter vectors differ in length");
  }
  if ((var < Scalar(0)).any()) throw std::invalid_argument("fuse_bn: negative variance");
  FusedAffine<Scalar> f;
  f.scale = gamma / (var + eps).sqrt();
  f.shift = beta - f.scale * mean;
  return f;
}

/**
 * Batch normalization with one state per switch.
 *
 * Storage follows the mode:
 *   private_all        gamma, beta, mean, var per switch, sized to that switch's channels
 *   shared_scale_bias  one gamma/beta at max width (prefix-sliced), mean/var per switch
 *   naive_shared       one set of everything at max width, prefix-sliced by every switch
 */
template <typename Scalar>
class SwitchableBN {
 public:
  using Array = typename Tensor<Scalar>::Array;

  struct Stats {
    Array mean;
    Array var;
  };

  SwitchableBN(int max_channels, std::vector<int> switch_channels, BNMode mode, Scalar eps = Scalar(1e-5),
               Scalar momentum = Scalar(0.1))
      : max_channels_(max_channels),
        switch_channels_(std::move(switch_channels)),
        mode_(mode),
        eps_(eps),
        momentum_(momentum) {
    if (switch_channels_.empty()) throw std::invalid_argument("SwitchableBN needs at least one switch");
    for (int c : switch_channels_) {
      if (c < 1 || c > max_channels_) throw ShapeError("SwitchableBN: switch channel count out of range");
    }
    const std::size_t nparams = mode_ == BNMode::private_all ? num_switches() : 1;
    const std::size_t nstats = mode_ == BNMode::naive_shared ? 1 : num_switches();
    for (std::size_t k = 0; k < nparams; ++k) {
      const Index c = mode_ == BNMode::private_all ? switch_channels_[k] : max_channels_;
      gammas_.emplace_back(Shape{c}, Scalar(1), true);
      betas_.emplace_back(Shape{c}, Scalar(0), true);
    }
    for (std::size_t k = 0; k < nstats; ++k) {
      const Index c = mode_ == BNMode::naive_shared ? max_channels_ : switch_channels_[k];
      stats_.push_back({Array::Zero(c), Array::Ones(c)});
    }
  }

  std::size_t num_switches() const { return switch_channels_.size(); }
  int channels(std::size_t s) const { return switch_channels_.at(s); }
  int max_channels() const { return max_channels_; }
  BNMode mode() const { return mode_; }
  Scalar eps() const { return eps_; }
  Scalar momentum() const { return momentum_; }

  /// Frozen statistics: training-mode forward normalizes with the moving statistics and never updates them.
  bool frozen() const { return frozen_; }
  void set_frozen(bool on) { frozen_ = on; }

  std::size_t param_slot(std::size_t s) const { return mode_ == BNMode::private_all ? s : 0; }
  std::size_t stat_slot(std::size_t s) const { return mode_ == BNMode::naive_shared ? 0 : s; }

  Tensor<Scalar> forward_train(const Tensor<Scalar>& x, std::size_t s) {
    check_input(x, s);
    const Index c = channels(s);
    if (frozen_) return forward_eval(x, s);
    auto r = batch_norm_train(x, gamma_tensor(s), beta_tensor(s), eps_);
    Stats& st = stats_[stat_slot(s)];
    st.mean.head(c) = (Scalar(1) - momentum_) * st.mean.head(c) + momentum_ * r.mean;
    st.var.head(c) = (Scalar(1) - momentum_) * st.var.head(c) + momentum_ * r.var;
    return r.y;
  }

  Tensor<Scalar> forward_eval(const Tensor<Scalar>& x, std::size_t s) const {
    check_input(x, s);
    const Index c = channels(s);
    const Stats& st = stats_[stat_slot(s)];
    return batch_norm_eval(x, gamma_tensor(s), beta_tensor(s), Array(st.mean.head(c)), Array(st.var.head(c)),
                           eps_);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, std::size_t s, bool training) {
    return training ? forward_train(x, s) : forward_eval(x, s);
  }

  /// Switch s's view of the parameters and statistics, sized to its channels.
  Array gamma(std::size_t s) const { return gammas_[param_slot(s)].data().head(channels(s)); }
  Array beta(std::size_t s) const { return betas_[param_slot(s)].data().head(channels(s)); }
  Array mean(std::size_t s) const { return stats_[stat_slot(s)].mean.head(channels(s)); }
  Array var(std::size_t s) const { return stats_[stat_slot(s)].var.head(channels(s)); }

  FusedAffine<Scalar> fused(std::size_t s) const {
    return fuse_bn<Scalar>(gamma(s), beta(s), mean(s), var(s), eps_);
  }

  /// Learnable tensors (gamma then beta per slot).
  std::vector<Tensor<Scalar>> parameters() const {
    std::vector<Tensor<Scalar>> out;
    for (std::size_t k = 0; k < gammas_.size(); ++k) {
      out.push_back(gammas_[k]);
      out.push_back(betas_[k]);
    }
    return out;
  }

  // Raw slot access for serialization.
  std::vector<Tensor<Scalar>>& gamma_slots() { return gammas_; }
  std::vector<Tensor<Scalar>>& beta_slots() { return betas_; }
  std::vector<Stats>& stat_slots() { return stats_; }
  const std::vector<Tensor<Scalar>>& gamma_slots() const { return gammas_; }
  const std::vector<Tensor<Scalar>>& beta_slots() const { return betas_; }
  const std::vector<Stats>& stat_slots() const { return stats_; }

 private:
  void check_input(const Tensor<Scalar>& x, std::size_t s) const {
    if (s >= num_switches()) throw std::out_of_range("SwitchableBN: switch index out of range");
    if (x.rank() != 4 || x.dim(1) != channels(s)) {
      throw ShapeError("SwitchableBN: switch " + std::to_string(s) + " expects " + std::to_string(channels(s)) +
                       " channels, input is " + shape_str(x.shape()));
    }
  }

  Tensor<Scalar> gamma_tensor(std::size_t s) const {
    return slice_prefix(gammas_[param_slot(s)], Shape{channels(s)});
  }
  Tensor<Scalar> beta_tensor(std::size_t s) const {
    return slice_prefix(betas_[param_slot(s)], Shape{channels(s)});
  }

  int max_channels_;
  std::vector<int> switch_channels_;
  BNMode mode_;
  Scalar eps_;
  Scalar momentum_;
  bool frozen_ = false;
  std::vector<Tensor<Scalar>> gammas_;
  std::vector<Tensor<Scalar>> betas_;
  std::vector<Stats> stats_;
};

/**
 * Folds switch s of an inference-mode batch norm into the convolution before
 * it: w'[o] = scale[o] * w[o], b'[o] = scale[o] * b[o] + shift[o]. `bias` may
 * be undefined (treated as zero). Returns detached tensors.
 */
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> fuse_into_conv(const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                                                         const FusedAffine<Scalar>& affine) {
  const Index out = weight.dim(0);
  if (affine.scale.size() != out) {
    throw ShapeError("fuse_into_conv: " + std::to_string(affine.scale.size()) + " BN channels for " +
                     std::to_string(out) + " conv outputs");
  }
  if (bias.defined() && bias.numel() != out) throw ShapeError("fuse_into_conv: bias length mismatch");
  const Index per_out = weight.numel() / out;
  Tensor<Scalar> w2 = weight.detach();
  detail::MatrixMap<Scalar> wm(w2.ptr(), out, per_out);
  wm.array().colwise() *= affine.scale;
  Tensor<Scalar> b2(Shape{out});
  b2.data() = affine.shift;
  if (bias.defined()) b2.data() += affine.scale * bias.data();
  return {w2, b2};
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> fuse_into_conv(const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                                                         const SwitchableBN<Scalar>& bn, std::size_t s) {
  return fuse_into_conv(weight, bias, bn.fused(s));
}

}  // namespace slimnet

#endif  // SLIMNET_SWITCHABLE_BN_HPP_
