// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SLIMNET_OPTIM_HPP_
#define SLIMNET_OPTIM_HPP_

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "slimnet/tensor.hpp"

namespace slimnet {

struct SGDConfig {
  double lr = 0.045;
  double momentum = 0.9;
  bool nesterov = true;
  double dampening = 0.0;
  double weight_decay = 1e-4;

  void validate() const {
    if (!(lr > 0)) throw std::invalid_argument("SGD learning rate must be positive");
    if (weight_decay < 0) throw std::invalid_argument("weight decay must be non-negative");
    if (momentum < 0 || momentum >= 1) throw std::invalid_argument("momentum must lie in [0, 1)");
    if (nesterov && (momentum == 0 || dampening != 0)) {
      throw std::invalid_argument("Nesterov momentum needs momentum > 0 and zero dampening");
    }
  }
};

/// Elements allowed to change in a step; std::nullopt means the whole tensor.
using UpdateMask = std::optional<Eigen::Array<bool, Eigen::Dynamic, 1>>;

/**
 * SGD with (Nesterov) momentum and L2 weight decay folded into the gradient:
 *
 *   g = grad + wd * p        (decay-marked parameters only)
 *   v = momentum * v + (1 - dampening) * g
 *   p -= lr * (nesterov ? g + momentum * v : v)
 *
 * Parameters without a gradient buffer are skipped. Masked-out elements keep
 * both their value and their velocity.
 */
template <typename Scalar>
class Sgd {
 public:
  using Array = typename Tensor<Scalar>::Array;

  Sgd(std::vector<Parameter<Scalar>> params, SGDConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    velocity_.resize(params_.size());
  }

  const SGDConfig& config() const { return cfg_; }
  const std::vector<Parameter<Scalar>>& params() const { return params_; }
  std::size_t steps() const { return steps_; }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void step(double lr, const std::vector<UpdateMask>* masks = nullptr) {
    if (masks && masks->size() != params_.size()) throw std::invalid_argument("one update mask per parameter");
    const Scalar mu = static_cast<Scalar>(cfg_.momentum);
    const Scalar damp = static_cast<Scalar>(1.0 - cfg_.dampening);
    const Scalar wd = static_cast<Scalar>(cfg_.weight_decay);
    const Scalar rate = static_cast<Scalar>(lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<Scalar>& p = params_[i].tensor;
      if (!p.has_grad()) continue;
      Array g = p.grad();
      if (params_[i].decay && wd != Scalar(0)) g += wd * p.data();
      Array update;
      if (mu != Scalar(0)) {
        Array& v = velocity_[i];
        if (v.size() == 0) v = Array::Zero(p.numel());
        Array v_new = mu * v + damp * g;
        update = cfg_.nesterov ? Array(g + mu * v_new) : v_new;
        if (masks && (*masks)[i]) {
          v = (*(*masks)[i]).select(v_new, v);
        } else {
          v = std::move(v_new);
        }
      } else {
        update = std::move(g);
      }
      if (masks && (*masks)[i]) {
        p.data() = (*(*masks)[i]).select(p.data() - rate * update, p.data());
      } else {
        p.data() -= rate * update;
      }
    }
    ++steps_;
  }

  const Array& velocity(std::size_t i) const { return velocity_.at(i); }

 private:
  std::vector<Parameter<Scalar>> params_;
  SGDConfig cfg_;
  std::vector<Array> velocity_;
  std::size_t steps_ = 0;
};

/// Learning-rate schedules; every variant is non-increasing and non-negative.
struct LRSchedule {
  enum class Kind { constant, exponential, linear, step };

  Kind kind = Kind::exponential;
  double base_lr = 0.045;
  double gamma = 0.98;             // exponential: per-epoch factor
  std::vector<int> milestones{};   // step: epochs where lr drops
  double factor = 0.1;             // step: drop factor

  static LRSchedule constant_lr(double lr) { return {Kind::constant, lr}; }
  static LRSchedule exponential_lr(double lr, double gamma = 0.98) { return {Kind::exponential, lr, gamma}; }
  static LRSchedule linear_lr(double lr) { return {Kind::linear, lr}; }
  static LRSchedule step_lr(double lr, std::vector<int> milestones, double factor = 0.1) {
    return {Kind::step, lr, 0.98, std::move(milestones), factor};
  }

  /// lr for `iteration` (0-based, global) within `epoch`, of `total_iterations`.
  double at(int epoch, long iteration, long total_iterations) const {
    switch (kind) {
      case Kind::constant:
        return base_lr;
      case Kind::exponential:
        return base_lr * std::pow(gamma, epoch);
      case Kind::linear:
        if (total_iterations <= 1) return 0.0;
        return std::max(0.0, base_lr * (1.0 - static_cast<double>(iteration) / static_cast<double>(total_iterations - 1)));
      case Kind::step: {
        double lr = base_lr;
        for (int m : milestones) {
          if (epoch >= m) lr *= factor;
        }
        return lr;
      }
    }
    return base_lr;
  }

  std::string name() const {
    switch (kind) {
      case Kind::constant:
        return "constant";
      case Kind::exponential:
        return "exponential";
      case Kind::linear:
        return "linear";
      case Kind::step:
        return "step";
    }
    return "?";
  }
};

}  // namespace slimnet

#endif  // SLIMNET_OPTIM_HPP_
