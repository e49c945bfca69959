// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SLIMNET_OPS_HPP_
#define SLIMNET_OPS_HPP_

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "slimnet/tensor.hpp"

namespace slimnet {

struct Conv2dOptions {
  Index stride = 1;
  Index pad = 0;
  Index groups = 1;
};

namespace detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

template <typename Scalar>
void record(std::function<void()> fn) {
  Tape<Scalar>::current()->record(std::move(fn));
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

struct ConvGeometry {
  Index n, ci, h, w, co, kh, kw, ho, wo, stride, pad, groups;
  Index ci_g() const { return ci / groups; }
  Index co_g() const { return co / groups; }
  Index taps() const { return ci_g() * kh * kw; }
  Index plane() const { return ho * wo; }
};

template <typename Scalar>
ConvGeometry conv_geometry(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                           const Conv2dOptions& opt) {
  require(x.rank() == 4, "conv2d input must be NCHW, got " + shape_str(x.shape()));
  require(w.rank() == 4, "conv2d weight must be OIHW, got " + shape_str(w.shape()));
  require(opt.groups >= 1 && opt.stride >= 1 && opt.pad >= 0, "conv2d: invalid stride/pad/groups");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.ci = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.co = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = opt.stride;
  g.pad = opt.pad;
  g.groups = opt.groups;
  require(g.ci % g.groups == 0, "conv2d: input channels " + std::to_string(g.ci) +
                                    " not divisible by groups " + std::to_string(g.groups));
  require(g.co % g.groups == 0, "conv2d: output channels " + std::to_string(g.co) +
                                    " not divisible by groups " + std::to_string(g.groups));
  require(w.dim(1) == g.ci / g.groups,
          "conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  require(g.h + 2 * g.pad >= g.kh && g.w + 2 * g.pad >= g.kw, "conv2d: kernel larger than padded input");
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  return g;
}

// col[(c*kh + i)*kw + j, oy*wo + ox] = x[c, oy*s - p + i, ox*s - p + j]
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Index channels, Scalar* col) {
  for (Index c = 0; c < channels; ++c) {
    const Scalar* xc = x + c * g.h * g.w;
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        Scalar* row = col + ((c * g.kh + i) * g.kw + j) * g.plane();
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + i;
          Scalar* out = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wo, Scalar(0));
            continue;
          }
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + j;
            out[ox] = (ix < 0 || ix >= g.w) ? Scalar(0) : xc[iy * g.w + ix];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* col, const ConvGeometry& g, Index channels, Scalar* dx) {
  for (Index c = 0; c < channels; ++c) {
    Scalar* dxc = dx + c * g.h * g.w;
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        const Scalar* row = col + ((c * g.kh + i) * g.kw + j) * g.plane();
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + i;
          if (iy < 0 || iy >= g.h) continue;
          const Scalar* in = row + oy * g.wo;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + j;
            if (ix >= 0 && ix < g.w) dxc[iy * g.w + ix] += in[ox];
          }
        }
      }
    }
  }
}

// One input channel per output channel: direct loops beat a 1-row GEMM.
template <typename Scalar>
void depthwise_forward(const Scalar* x, const Scalar* w, const ConvGeometry& g, Scalar* y) {
  for (Index c = 0; c < g.co; ++c) {
    const Scalar* xc = x + c * g.h * g.w;
    const Scalar* wc = w + c * g.kh * g.kw;
    Scalar* yc = y + c * g.plane();
    for (Index oy = 0; oy < g.ho; ++oy) {
      for (Index ox = 0; ox < g.wo; ++ox) {
        Scalar acc(0);
        for (Index i = 0; i < g.kh; ++i) {
          const Index iy = oy * g.stride - g.pad + i;
          if (iy < 0 || iy >= g.h) continue;
          for (Index j = 0; j < g.kw; ++j) {
            const Index ix = ox * g.stride - g.pad + j;
            if (ix < 0 || ix >= g.w) continue;
            acc += xc[iy * g.w + ix] * wc[i * g.kw + j];
          }
        }
        yc[oy * g.wo + ox] += acc;
      }
    }
  }
}

template <typename Scalar>
void depthwise_backward(const Scalar* x, const Scalar* w, const Scalar* dy, const ConvGeometry& g,
                        Scalar* dx, Scalar* dw) {
  for (Index c = 0; c < g.co; ++c) {
    const Scalar* xc = x + c * g.h * g.w;
    const Scalar* wc = w + c * g.kh * g.kw;
    const Scalar* dyc = dy + c * g.plane();
    Scalar* dxc = dx ? dx + c * g.h * g.w : nullptr;
    Scalar* dwc = dw ? dw + c * g.kh * g.kw : nullptr;
    for (Index oy = 0; oy < g.ho; ++oy) {
      for (Index ox = 0; ox < g.wo; ++ox) {
        const Scalar d = dyc[oy * g.wo + ox];
        for (Index i = 0; i < g.kh; ++i) {
          const Index iy = oy * g.stride - g.pad + i;
          if (iy < 0 || iy >= g.h) continue;
          for (Index j = 0; j < g.kw; ++j) {
            const Index ix = ox * g.stride - g.pad + j;
            if (ix < 0 || ix >= g.w) continue;
            if (dxc) dxc[iy * g.w + ix] += d * wc[i * g.kw + j];
            if (dwc) dwc[i * g.kw + j] += d * xc[iy * g.w + ix];
          }
        }
      }
    }
  }
}

}  // namespace detail

/**
 * 2-D cross-correlation over NCHW input with OIHW weights and optional bias.
 * Grouped when groups > 1; groups == in == out channels is depthwise.
 */
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b,
                      const Conv2dOptions& opt = {}) {
  using namespace detail;
  const ConvGeometry g = conv_geometry(x, w, opt);
  if (b.defined()) {
    require(b.rank() == 1 && b.dim(0) == g.co,
            "conv2d: bias " + shape_str(b.shape()) + " for " + std::to_string(g.co) + " outputs");
  }
  Tensor<Scalar> y(Shape{g.n, g.co, g.ho, g.wo});
  const bool depthwise = g.ci_g() == 1 && g.co_g() == 1;
  std::vector<Scalar> col(depthwise ? 0 : static_cast<std::size_t>(g.taps() * g.plane()));

  for (Index n = 0; n < g.n; ++n) {
    const Scalar* xn = x.ptr() + n * g.ci * g.h * g.w;
    Scalar* yn = y.ptr() + n * g.co * g.plane();
    if (depthwise) {
      depthwise_forward(xn, w.ptr(), g, yn);
    } else {
      for (Index grp = 0; grp < g.groups; ++grp) {
        im2col(xn + grp * g.ci_g() * g.h * g.w, g, g.ci_g(), col.data());
        ConstMatrixMap<Scalar> wg(w.ptr() + grp * g.co_g() * g.taps(), g.co_g(), g.taps());
        ConstMatrixMap<Scalar> cm(col.data(), g.taps(), g.plane());
        MatrixMap<Scalar> yg(yn + grp * g.co_g() * g.plane(), g.co_g(), g.plane());
        yg.noalias() = wg * cm;
      }
    }
    if (b.defined()) {
      MatrixMap<Scalar> ym(yn, g.co, g.plane());
      ym.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(b.ptr(), g.co);
    }
  }

  if (should_record<Scalar>(x, w, b)) {
    y.set_requires_grad(true);
    record<Scalar>([x, w, b, y, g, depthwise]() mutable {
      if (!y.has_grad()) return;
      const auto& dy = y.grad();
      Scalar* dx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
      Scalar* dw = w.requires_grad() ? w.grad_buffer().data() : nullptr;
      if (b.requires_grad()) {
        auto& db = b.grad_buffer();
        for (Index n = 0; n < g.n; ++n) {
          ConstMatrixMap<Scalar> dyn(dy.data() + n * g.co * g.plane(), g.co, g.plane());
          db.matrix() += dyn.rowwise().sum();
        }
      }
      if (!dx && !dw) return;
      std::vector<Scalar> col(depthwise ? 0 : static_cast<std::size_t>(g.taps() * g.plane()));
      for (Index n = 0; n < g.n; ++n) {
        const Scalar* xn = x.ptr() + n * g.ci * g.h * g.w;
        const Scalar* dyn = dy.data() + n * g.co * g.plane();
        Scalar* dxn = dx ? dx + n * g.ci * g.h * g.w : nullptr;
        if (depthwise) {
          depthwise_backward(xn, w.ptr(), dyn, g, dxn, dw);
          continue;
        }
        for (Index grp = 0; grp < g.groups; ++grp) {
          ConstMatrixMap<Scalar> dyg(dyn + grp * g.co_g() * g.plane(), g.co_g(), g.plane());
          ConstMatrixMap<Scalar> wg(w.ptr() + grp * g.co_g() * g.taps(), g.co_g(), g.taps());
          if (dw) {
            im2col(xn + grp * g.ci_g() * g.h * g.w, g, g.ci_g(), col.data());
            ConstMatrixMap<Scalar> cm(col.data(), g.taps(), g.plane());
            MatrixMap<Scalar> dwg(dw + grp * g.co_g() * g.taps(), g.co_g(), g.taps());
            dwg.noalias() += dyg * cm.transpose();
          }
          if (dxn) {
            MatrixMap<Scalar> cm(col.data(), g.taps(), g.plane());
            cm.noalias() = wg.transpose() * dyg;
            col2im_add(col.data(), g, g.ci_g(), dxn + grp * g.ci_g() * g.h * g.w);
          }
        }
      }
    });
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Conv2dOptions& opt = {}) {
  return conv2d(x, w, Tensor<Scalar>(), opt);
}

/// Per-channel convolution: conv2d with one group per channel. w is [C,1,kh,kw].
template <typename Scalar>
Tensor<Scalar> depthwise_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b,
                                Index stride, Index pad) {
  detail::require(x.rank() == 4 && w.rank() == 4 && w.dim(1) == 1 && w.dim(0) == x.dim(1),
                  "depthwise_conv2d: weight " + shape_str(w.shape()) + " for input " + shape_str(x.shape()));
  return conv2d(x, w, b, Conv2dOptions{stride, pad, x.dim(1)});
}

/// y = x * w^T + b for x [N,Ci], w [Co,Ci], b [Co].
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
  using namespace detail;
  require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1),
          "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const Index n = x.dim(0), ci = x.dim(1), co = w.dim(0);
  if (b.defined()) require(b.rank() == 1 && b.dim(0) == co, "linear: bias " + shape_str(b.shape()));
  Tensor<Scalar> y(Shape{n, co});
  ConstMatrixMap<Scalar> xm(x.ptr(), n, ci);
  ConstMatrixMap<Scalar> wm(w.ptr(), co, ci);
  MatrixMap<Scalar> ym(y.ptr(), n, co);
  ym.noalias() = xm * wm.transpose();
  if (b.defined()) ym.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(b.ptr(), co);

  if (should_record<Scalar>(x, w, b)) {
    y.set_requires_grad(true);
    record<Scalar>([x, w, b, y, n, ci, co]() mutable {
      if (!y.has_grad()) return;
      ConstMatrixMap<Scalar> dy(y.grad().data(), n, co);
      if (x.requires_grad()) {
        MatrixMap<Scalar> dx(x.grad_buffer().data(), n, ci);
        dx.noalias() += dy * ConstMatrixMap<Scalar>(w.ptr(), co, ci);
      }
      if (w.requires_grad()) {
        MatrixMap<Scalar> dw(w.grad_buffer().data(), co, ci);
        dw.noalias() += dy.transpose() * ConstMatrixMap<Scalar>(x.ptr(), n, ci);
      }
      if (b.requires_grad()) b.grad_buffer().matrix() += dy.colwise().sum().transpose();
    });
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape(), x.data().max(Scalar(0)).eval());
  if (detail::should_record<Scalar>(x)) {
    y.set_requires_grad(true);
    detail::record<Scalar>([x, y]() mutable {
      if (!y.has_grad()) return;
      x.grad_buffer() += (x.data() > Scalar(0)).select(y.grad(), Scalar(0));
    });
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require(a.shape() == b.shape(), "add: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<Scalar> y(a.shape(), (a.data() + b.data()).eval());
  if (detail::should_record<Scalar>(a, b)) {
    y.set_requires_grad(true);
    detail::record<Scalar>([a, b, y]() mutable {
      if (!y.has_grad()) return;
      if (a.requires_grad()) a.grad_buffer() += y.grad();
      if (b.requires_grad()) b.grad_buffer() += y.grad();
    });
  }
  return y;
}

/// Elementwise product.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require(a.shape() == b.shape(), "mul: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<Scalar> y(a.shape(), (a.data() * b.data()).eval());
  if (detail::should_record<Scalar>(a, b)) {
    y.set_requires_grad(true);
    detail::record<Scalar>([a, b, y]() mutable {
      if (!y.has_grad()) return;
      const typename Tensor<Scalar>::Array dy = y.grad();
      if (a.requires_grad()) a.grad_buffer() += dy * b.data();
      if (b.requires_grad()) b.grad_buffer() += dy * a.data();
    });
  }
  return y;
}

/// Sum of all elements, as a scalar tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Tensor<Scalar> y = Tensor<Scalar>::scalar(x.data().sum());
  if (detail::should_record<Scalar>(x)) {
    y.set_requires_grad(true);
    detail::record<Scalar>([x, y]() mutable {
      if (!y.has_grad()) return;
      x.grad_buffer() += y.grad()[0];
    });
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  detail::require(x.rank() == 4, "global_avg_pool: expected NCHW, got " + shape_str(x.shape()));
  const Index nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<Scalar> y(Shape{x.dim(0), x.dim(1)});
  detail::ConstMatrixMap<Scalar> xm(x.ptr(), nc, hw);
  y.data() = (xm.rowwise().sum() / Scalar(hw)).array();
  if (detail::should_record<Scalar>(x)) {
    y.set_requires_grad(true);
    detail::record<Scalar>([x, y, nc, hw]() mutable {
      if (!y.has_grad()) return;
      detail::MatrixMap<Scalar> dx(x.grad_buffer().data(), nc, hw);
      dx.colwise() += (y.grad() / Scalar(hw)).matrix();
    });
  }
  return y;
}

/// Mean over the batch of -log softmax(logits)[label], max-shifted.
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  using namespace detail;
  require(logits.rank() == 2, "softmax_cross_entropy: logits must be [N,K], got " + shape_str(logits.shape()));
  const Index n = logits.dim(0), k = logits.dim(1);
  require(static_cast<Index>(labels.size()) == n && n > 0, "softmax_cross_entropy: label count mismatch");
  for (int label : labels) {
    if (label < 0 || label >= k) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " outside [0," +
                              std::to_string(k) + ")");
    }
  }
  ConstMatrixMap<Scalar> lm(logits.ptr(), n, k);
  RowMatrix<Scalar> prob(n, k);
  Scalar total(0);
  for (Index i = 0; i < n; ++i) {
    const Scalar mx = lm.row(i).maxCoeff();
    prob.row(i) = (lm.row(i).array() - mx).exp().matrix();
    const Scalar z = prob.row(i).sum();
    total += std::log(z) - (lm(i, labels[static_cast<std::size_t>(i)]) - mx);
    prob.row(i) /= z;
  }
  Tensor<Scalar> loss = Tensor<Scalar>::scalar(total / Scalar(n));
  if (should_record<Scalar>(logits)) {
    loss.set_requires_grad(true);
    std::vector<int> labs(labels.begin(), labels.end());
    record<Scalar>([logits, loss, prob = std::move(prob), labs = std::move(labs), n, k]() mutable {
      if (!loss.has_grad()) return;
      const Scalar scale = loss.grad()[0] / Scalar(n);
      MatrixMap<Scalar> dl(logits.grad_buffer().data(), n, k);
      for (Index i = 0; i < n; ++i) {
        auto row = dl.row(i);
        row += scale * prob.row(i);
        row(labs[static_cast<std::size_t>(i)]) -= scale;
      }
    });
  }
  return loss;
}

/**
 * Leading-prefix slice: out[i0, i1, ...] = x[i0, i1, ...] for every index
 * within `extent`. Backward scatters into the prefix only, so entries outside
 * the slice receive no gradient.
 */
template <typename Scalar>
Tensor<Scalar> slice_prefix(const Tensor<Scalar>& x, const Shape& extent) {
  using namespace detail;
  require(static_cast<Index>(extent.size()) == x.rank(), "slice_prefix: rank mismatch");
  for (std::size_t d = 0; d < extent.size(); ++d) {
    require(extent[d] >= 0 && extent[d] <= x.shape()[d],
            "slice_prefix: extent " + shape_str(extent) + " exceeds " + shape_str(x.shape()));
  }
  if (extent == x.shape()) return x;

  // Fold trailing full dims into one contiguous inner run.
  const std::size_t r = extent.size();
  std::size_t split = r;
  Index inner = 1;
  while (split > 0 && extent[split - 1] == x.shape()[split - 1]) inner *= extent[--split];
  Index run = inner;
  if (split > 0) run *= extent[split - 1];

  Shape outer_ext(extent.begin(), extent.begin() + static_cast<std::ptrdiff_t>(split ? split - 1 : 0));
  std::vector<Index> src_stride(r, 1);
  for (std::size_t d = r - 1; d-- > 0;) src_stride[d] = src_stride[d + 1] * x.shape()[d + 1];
  const Index outer = numel_of(outer_ext);

  auto offsets = std::make_shared<std::vector<Index>>();
  offsets->reserve(static_cast<std::size_t>(outer));
  std::vector<Index> idx(outer_ext.size(), 0);
  for (Index o = 0; o < outer; ++o) {
    Index off = 0;
    for (std::size_t d = 0; d < idx.size(); ++d) off += idx[d] * src_stride[d];
    offsets->push_back(off);
    for (std::size_t d = idx.size(); d-- > 0;) {
      if (++idx[d] < outer_ext[d]) break;
      idx[d] = 0;
    }
  }

  Tensor<Scalar> y(extent);
  for (Index o = 0; o < outer; ++o) {
    std::copy_n(x.ptr() + (*offsets)[static_cast<std::size_t>(o)], run, y.ptr() + o * run);
  }
  if (should_record<Scalar>(x)) {
    y.set_requires_grad(true);
    record<Scalar>([x, y, offsets, run]() mutable {
      if (!y.has_grad()) return;
      auto& dx = x.grad_buffer();
      const auto& dy = y.grad();
      for (std::size_t o = 0; o < offsets->size(); ++o) {
        dx.segment((*offsets)[o], run) += dy.segment(static_cast<Index>(o) * run, run);
      }
    });
  }
  return y;
}

template <typename Scalar>
struct BatchNormResult {
  Tensor<Scalar> y;
  typename Tensor<Scalar>::Array mean;
  typename Tensor<Scalar>::Array var;  // biased
};

/**
 * Training-mode batch normalization over N*H*W per channel with the biased
 * batch variance. Returns the batch statistics alongside the output.
 */
template <typename Scalar>
BatchNormResult<Scalar> batch_norm_train(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                         const Tensor<Scalar>& beta, Scalar eps) {
  using namespace detail;
  using Array = typename Tensor<Scalar>::Array;
  require(x.rank() == 4, "batch_norm: expected NCHW, got " + shape_str(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3), m = n * hw;
  require(gamma.numel() == c && beta.numel() == c,
          "batch_norm: " + std::to_string(gamma.numel()) + " parameters for " + std::to_string(c) + " channels");
  require(m >= 2, "batch_norm: reduction over a single element");

  Array mean = Array::Zero(c), var = Array::Zero(c);
  for (Index i = 0; i < n; ++i) {
    ConstMatrixMap<Scalar> xi(x.ptr() + i * c * hw, c, hw);
    mean.matrix() += xi.rowwise().sum();
  }
  mean /= Scalar(m);
  for (Index i = 0; i < n; ++i) {
    ConstMatrixMap<Scalar> xi(x.ptr() + i * c * hw, c, hw);
    var.matrix() += (xi.colwise() - mean.matrix()).rowwise().squaredNorm();
  }
  var /= Scalar(m);
  Array inv_std = (var + eps).rsqrt();

  Tensor<Scalar> y(x.shape());
  const Array scale = gamma.data() * inv_std;
  const Array shift = beta.data() - mean * scale;
  for (Index i = 0; i < n; ++i) {
    ConstMatrixMap<Scalar> xi(x.ptr() + i * c * hw, c, hw);
    MatrixMap<Scalar> yi(y.ptr() + i * c * hw, c, hw);
    yi = (xi.array().colwise() * scale).colwise() + shift;
  }

  if (should_record<Scalar>(x, gamma, beta)) {
    y.set_requires_grad(true);
    record<Scalar>([x, gamma, beta, y, mean, inv_std, n, c, hw, m]() mutable {
      if (!y.has_grad()) return;
      const auto& dy = y.grad();
      Array sum_dy = Array::Zero(c), sum_dy_xhat = Array::Zero(c);
      for (Index i = 0; i < n; ++i) {
        ConstMatrixMap<Scalar> xi(x.ptr() + i * c * hw, c, hw);
        ConstMatrixMap<Scalar> dyi(dy.data() + i * c * hw, c, hw);
        sum_dy.matrix() += dyi.rowwise().sum();
        sum_dy_xhat += ((xi.array().colwise() - mean).colwise() * inv_std * dyi.array()).rowwise().sum();
      }
      if (gamma.requires_grad()) gamma.grad_buffer() += sum_dy_xhat;
      if (beta.requires_grad()) beta.grad_buffer() += sum_dy;
      if (!x.requires_grad()) return;
      auto& dx = x.grad_buffer();
      const Array k = gamma.data() * inv_std / Scalar(m);
      for (Index i = 0; i < n; ++i) {
        ConstMatrixMap<Scalar> xi(x.ptr() + i * c * hw, c, hw);
        ConstMatrixMap<Scalar> dyi(dy.data() + i * c * hw, c, hw);
        MatrixMap<Scalar> dxi(dx.data() + i * c * hw, c, hw);
        auto xhat = (xi.array().colwise() - mean).colwise() * inv_std;
        dxi.array() += ((Scalar(m) * dyi.array()).colwise() - sum_dy - xhat.colwise() * sum_dy_xhat).colwise() * k;
      }
    });
  }
  return {y, mean, var};
}

/**
 * Inference-mode batch normalization: gamma * (x - mean) / sqrt(var + eps) + beta
 * with fixed statistics. Gradients flow to x, gamma and beta.
 */
template <typename Scalar>
Tensor<Scalar> batch_norm_eval(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                               const typename Tensor<Scalar>::Array& mean,
                               const typename Tensor<Scalar>::Array& var, Scalar eps) {
  using namespace detail;
  using Array = typename Tensor<Scalar>::Array;
  require(x.rank() == 4, "batch_norm: expected NCHW, got " + shape_str(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require(gamma.numel() == c && beta.numel() == c && mean.size() == c && var.size() == c,
          "batch_norm: state sized for " + std::to_string(gamma.numel()) + " channels, input has " +
              std::to_string(c));
  const Array inv_std = (var + eps).sqrt().inverse();
  Tensor<Scalar> y(x.shape());
  for (Index i = 0; i < n; ++i) {
    ConstMatrixMap<Scalar> xi(x.ptr() + i * c * hw, c, hw);
    MatrixMap<Scalar> yi(y.ptr() + i * c * hw, c, hw);
    yi = (((xi.array().colwise() - mean).colwise() * inv_std).colwise() * gamma.data()).colwise() + beta.data();
  }
  if (should_record<Scalar>(x, gamma, beta)) {
    y.set_requires_grad(true);
    record<Scalar>([x, gamma, beta, y, mean, inv_std, n, c, hw]() mutable {
      if (!y.has_grad()) return;
      const auto& dy = y.grad();
      Array sum_dy = Array::Zero(c), sum_dy_xhat = Array::Zero(c);
      for (Index i = 0; i < n; ++i) {
        ConstMatrixMap<Scalar> xi(x.ptr() + i * c * hw, c, hw);
        ConstMatrixMap<Scalar> dyi(dy.data() + i * c * hw, c, hw);
        sum_dy.matrix() += dyi.rowwise().sum();
        sum_dy_xhat += ((xi.array().colwise() - mean).colwise() * inv_std * dyi.array()).rowwise().sum();
        if (x.requires_grad()) {
          MatrixMap<Scalar> dxi(x.grad_buffer().data() + i * c * hw, c, hw);
          dxi.array() += dyi.array().colwise() * (gamma.data() * inv_std);
        }
      }
      if (gamma.requires_grad()) gamma.grad_buffer() += sum_dy_xhat;
      if (beta.requires_grad()) beta.grad_buffer() += sum_dy;
    });
  }
  return y;
}

}  // namespace slimnet

#endif  // SLIMNET_OPS_HPP_
