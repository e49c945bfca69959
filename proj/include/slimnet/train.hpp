// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SLIMNET_TRAIN_HPP_
#define SLIMNET_TRAIN_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "slimnet/data.hpp"
#include "slimnet/model.hpp"
#include "slimnet/optim.hpp"

namespace slimnet {

enum class TrainMode { slimmable, naive, incremental, individual };

std::string to_string(TrainMode mode);
/// Accepts "slim", "naive", "incremental", "individual" and the long forms
/// "slimmable_sbn", "naive_shared_bn".
TrainMode parse_train_mode(const std::string& s);

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepResult {
  std::vector<double> losses;  // per trained switch, in training order
  std::vector<Index> correct;  // train-mode hits per switch
};

/// Argmax hits of logits against labels.
template <typename Scalar>
Index count_correct(const Tensor<Scalar>& logits, std::span<const int> labels) {
  const Index n = logits.dim(0), k = logits.dim(1);
  Index hits = 0;
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index j = 1; j < k; ++j) {
      if (logits.data()[i * k + j] > logits.data()[i * k + best]) best = j;
    }
    hits += best == labels[static_cast<std::size_t>(i)];
  }
  return hits;
}

/**
 * Elements of every model parameter that training the given switches can
 * touch, in model.parameters() order. Fully covered tensors map to nullopt.
 */
template <typename Scalar>
std::vector<UpdateMask> active_masks(const SlimmableNet<Scalar>& model, const std::vector<std::size_t>& switches) {
  using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;
  std::vector<UpdateMask> out;
  auto finish = [&](Mask m) {
    if (m.all()) {
      out.emplace_back(std::nullopt);
    } else {
      out.emplace_back(std::move(m));
    }
  };
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    const auto& layer = model.layer(i);
    if (layer.weight.defined()) {
      const Tensor<Scalar>& w = layer.weight;
      const Index cols = w.dim(1), taps = w.rank() == 4 ? w.dim(2) * w.dim(3) : 1;
      Mask m = Mask::Constant(w.numel(), false);
      for (std::size_t s : switches) {
        const LayerWidth lw = model.active_widths(s)[i];
        const Index in_per_group = w.rank() == 4 ? lw.in / lw.groups : lw.in;
        for (Index o = 0; o < lw.out; ++o) {
          m.segment(o * cols * taps, in_per_group * taps).setConstant(true);
        }
      }
      finish(std::move(m));
    }
    if (layer.bias.defined()) {
      Mask m = Mask::Constant(layer.bias.numel(), false);
      for (std::size_t s : switches) m.head(model.active_widths(s)[i].out).setConstant(true);
      finish(std::move(m));
    }
    if (layer.bn) {
      const auto& bn = *layer.bn;
      for (std::size_t k = 0; k < bn.gamma_slots().size(); ++k) {
        Mask m = Mask::Constant(bn.gamma_slots()[k].numel(), false);
        for (std::size_t s : switches) {
          if (bn.param_slot(s) == k) m.head(bn.channels(s)).setConstant(true);
        }
        finish(m);
        finish(std::move(m));
      }
    }
  }
  return out;
}

/// Elementwise a AND NOT b over mask lists of the same model.
inline std::vector<UpdateMask> subtract_masks(const std::vector<UpdateMask>& a, const std::vector<UpdateMask>& b,
                                              const std::vector<Index>& sizes) {
  using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;
  if (a.size() != b.size() || a.size() != sizes.size()) throw std::invalid_argument("mask lists differ in length");
  std::vector<UpdateMask> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Mask ma = a[i] ? *a[i] : Mask::Constant(sizes[i], true);
    const Mask mb = b[i] ? *b[i] : Mask::Constant(sizes[i], true);
    const Mask m = ma && !mb;
    out.emplace_back(m.all() ? UpdateMask{} : UpdateMask{m});
  }
  return out;
}

/**
 * One multi-switch training iteration: zero gradients once; for each switch
 * in ascending width order switch the model, run forward, cross-entropy and
 * backward (gradients accumulate, so the effective loss is the unweighted
 * sum); then exactly one optimizer step.
 */
template <typename Scalar>
StepResult train_step(SlimmableNet<Scalar>& model, Sgd<Scalar>& opt, const Tensor<Scalar>& x,
                      std::span<const int> y, const SwitchableWidthList& widths, double lr,
                      const std::vector<UpdateMask>* masks = nullptr) {
  if (x.rank() < 1 || x.dim(0) == 0) throw std::invalid_argument("train_step: empty batch");
  for (const auto& w : widths) {
    if (!model.widths().contains(w)) throw WidthError("train_step: width " + w.str() + " is not a model switch");
  }
  model.set_training(true);
  opt.zero_grad();
  StepResult r;
  for (const auto& w : widths) {
    model.switch_to(w);
    Tape<Scalar> tape;
    Tensor<Scalar> loss;
    {
      TapeScope<Scalar> scope(tape);
      const Tensor<Scalar> logits = model.forward(x);
      loss = softmax_cross_entropy(logits, y);
      r.correct.push_back(count_correct(logits, y));
    }
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      throw DivergenceError("non-finite loss at switch " + w.str() + " (step " + std::to_string(opt.steps()) + ")");
    }
    r.losses.push_back(value);
    tape.backward(loss);
  }
  opt.step(lr, masks);
  return r;
}

struct EvalResult {
  double error = 0.0;
  double loss = 0.0;
  Index samples = 0;
};

/// Top-1 error with moving BN statistics. Restores the model's switch and mode.
template <typename Scalar>
EvalResult evaluate(SlimmableNet<Scalar>& model, const Dataset& ds, WidthMultiplier w, Index batch_size = 256) {
  if (ds.size() == 0) throw DataError("evaluate: empty dataset");
  const WidthMultiplier prev_width = model.width();
  const bool prev_training = model.training();
  model.switch_to(w);
  model.set_training(false);
  NoGradScope<Scalar> no_grad;
  Index wrong = 0;
  double loss_sum = 0.0;
  for (Index b = 0; b < ds.size(); b += batch_size) {
    const Index n = std::min(batch_size, ds.size() - b);
    Tensor<Scalar> x = ds.slice(b, n).template cast<Scalar>();
    const std::span<const int> y(ds.labels.data() + b, static_cast<std::size_t>(n));
    const Tensor<Scalar> logits = model.forward(x);
    wrong += n - count_correct(logits, y);
    loss_sum += static_cast<double>(softmax_cross_entropy(logits, y).item()) * static_cast<double>(n);
  }
  model.switch_to(prev_width);
  model.set_training(prev_training);
  return {static_cast<double>(wrong) / static_cast<double>(ds.size()), loss_sum / static_cast<double>(ds.size()),
          ds.size()};
}

struct ReportRow {
  int epoch = 0;
  double width = 1.0;
  std::string split;
  double error = 0.0;
  double loss = 0.0;
  double lr = 0.0;
};

/// Per-epoch, per-switch curves. CSV columns: epoch,switch,split,error,loss,lr.
struct TrainReport {
  std::vector<ReportRow> rows;
  double wall_seconds = 0.0;
  std::string checkpoint;

  void write_csv(std::ostream& os) const;
  /// Last recorded error for (width, split); NaN when absent.
  double final_error(double width, const std::string& split = "test") const;
  int last_epoch() const { return rows.empty() ? 0 : rows.back().epoch; }
};

struct TrainOptions {
  int epochs = 5;
  Index batch_size = 64;
  SGDConfig sgd{};
  LRSchedule schedule{};
  std::uint64_t seed = 0;
  Augment augment{};
  bool eval_each_epoch = true;
  int first_epoch = 1;                 // numbering of the first epoch in the report
  std::optional<double> width_label{}; // report all rows under this width (individual baselines)
  std::function<void(const ReportRow&)> on_row{};
};

/**
 * Trains `switches` (default: every switch of the model) with train_step for
 * opts.epochs epochs. Train rows carry the running train-mode error of the
 * epoch; test rows the eval-mode error after it.
 */
TrainReport train(SlimmableNet<float>& model, const Dataset& train_set, const Dataset* test_set,
                  const TrainOptions& opts, const std::optional<SwitchableWidthList>& switches = std::nullopt,
                  const std::vector<UpdateMask>* masks = nullptr);

/**
 * Incremental baseline: phase 1 trains the base switch alone; phase 2 trains
 * the extended switch with every weight active at the base width frozen. The
 * extended switch's batch-norm slot starts as a copy of the base slot on the
 * shared channels. Each phase runs opts.epochs epochs.
 */
TrainReport train_incremental(SlimmableNet<float>& model, WidthMultiplier base, WidthMultiplier extended,
                              const Dataset& train_set, const Dataset* test_set, const TrainOptions& opts);

}  // namespace slimnet

#endif  // SLIMNET_TRAIN_HPP_
