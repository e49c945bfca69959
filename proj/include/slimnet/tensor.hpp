// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SLIMNET_TENSOR_HPP_
#define SLIMNET_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace slimnet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/**
 * Dense row-major array with shape metadata and an optional gradient buffer.
 *
 * A Tensor is a handle: copies share storage, as the autodiff tape needs
 * stable identities for the values it recorded. Use clone() for a deep copy.
 * Activations are NCHW and convolution weights OIHW.
 */
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0), bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    impl_->data = Array::Constant(numel_of(shape), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, Array data, bool requires_grad = false) : impl_(std::make_shared<Impl>()) {
    if (numel_of(shape) != data.size()) {
      throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Scalar(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }

  static Tensor from(Shape shape, std::initializer_list<Scalar> values) {
    Array data(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) data[i++] = v;
    return Tensor(std::move(shape), std::move(data));
  }

  bool defined() const { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl().shape; }
  Index rank() const { return static_cast<Index>(impl().shape.size()); }
  Index dim(Index i) const { return impl().shape.at(static_cast<std::size_t>(i)); }
  Index numel() const { return impl().data.size(); }

  Array& data() { return impl().data; }
  const Array& data() const { return impl().data; }
  Scalar* ptr() { return impl().data.data(); }
  const Scalar* ptr() const { return impl().data.data(); }

  Scalar item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl().data[0];
  }

  bool requires_grad() const { return defined() && impl_->requires_grad; }
  void set_requires_grad(bool on) { impl().requires_grad = on; }

  bool has_grad() const { return defined() && impl_->grad.has_value(); }

  const Array& grad() const {
    if (!has_grad()) throw std::logic_error("tensor has no gradient buffer");
    return *impl_->grad;
  }
  Array& grad() {
    if (!has_grad()) throw std::logic_error("tensor has no gradient buffer");
    return *impl_->grad;
  }

  /// Gradient buffer, allocated as zeros on first use. Gradients are a side
  /// channel of the handle, so this is available through const handles.
  Array& grad_buffer() const {
    if (!impl_) throw std::logic_error("use of undefined tensor");
    auto& g = impl_->grad;
    if (!g) g = Array::Zero(numel());
    return *g;
  }

  void zero_grad() const {
    if (has_grad()) impl_->grad->setZero();
  }
  void drop_grad() { impl().grad.reset(); }

  Tensor clone() const {
    Tensor t(shape(), data(), requires_grad());
    if (has_grad()) t.impl_->grad = *impl_->grad;
    return t;
  }
  Tensor detach() const { return Tensor(shape(), data(), false); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape(), data().template cast<Other>().eval(), false);
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  bool all_finite() const { return data().allFinite(); }

 private:
  struct Impl {
    Shape shape;
    Array data;
    bool requires_grad = false;
    std::optional<Array> grad;
  };

  Impl& impl() {
    if (!impl_) throw std::logic_error("use of undefined tensor");
    return *impl_;
  }
  const Impl& impl() const {
    if (!impl_) throw std::logic_error("use of undefined tensor");
    return *impl_;
  }

  std::shared_ptr<Impl> impl_;
};

/**
 * Ordered record of executed differentiable ops.
 *
 * Ops record a backward closure when a tape is active on the current thread
 * (see TapeScope) and at least one input requires a gradient. backward()
 * replays the closures in exact reverse order and retires the tape.
 */
template <typename Scalar>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn) {
    if (consumed_) throw std::logic_error("recording onto a tape that already ran backward");
    entries_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  /// Seeds d(loss)/d(loss) = 1 and accumulates into every requires_grad tensor.
  void backward(Tensor<Scalar>& loss) {
    if (consumed_) throw std::logic_error("backward called twice on the same tape");
    if (loss.numel() != 1) {
      throw ShapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    consumed_ = true;
    if (!loss.requires_grad()) {
      entries_.clear();
      return;
    }
    loss.grad_buffer()[0] += Scalar(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

  static Tape* current() { return current_; }

 private:
  template <typename>
  friend class TapeScope;
  template <typename>
  friend class NoGradScope;

  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
  static inline thread_local Tape* current_ = nullptr;
};

/// Makes a tape the active recording target for the current thread.
template <typename Scalar>
class TapeScope {
 public:
  explicit TapeScope(Tape<Scalar>& tape) : previous_(Tape<Scalar>::current_) {
    Tape<Scalar>::current_ = &tape;
  }
  ~TapeScope() { Tape<Scalar>::current_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Scalar>* previous_;
};

/// Suspends recording for the current thread, e.g. during evaluation.
template <typename Scalar>
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape<Scalar>::current_) { Tape<Scalar>::current_ = nullptr; }
  ~NoGradScope() { Tape<Scalar>::current_ = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<Scalar>* previous_;
};

/// A named learnable tensor. `decay` marks it for L2 weight decay.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> tensor;
  bool decay = false;
};

namespace detail {

/// True when an op over these inputs must be recorded on the active tape.
template <typename Scalar, typename... Ts>
bool should_record(const Ts&... inputs) {
  if (Tape<Scalar>::current() == nullptr) return false;
  return (inputs.requires_grad() || ...);
}

}  // namespace detail

}  // namespace slimnet

#endif  // SLIMNET_TENSOR_HPP_
