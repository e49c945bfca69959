// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

// Shared helpers and independent reference implementations for the tests.
// The oracles here use plain loops in double precision and never call the
// library's ops.

#ifndef SLIMNET_TESTS_TEST_UTIL_HPP_
#define SLIMNET_TESTS_TEST_UTIL_HPP_

#include <cmath>
#include <random>
#include <vector>

#include "slimnet/tensor.hpp"

namespace slimnet::testing {

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = false) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor<Scalar> t(std::move(shape), Scalar(0), requires_grad);
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  return (a.template cast<double>() - b.template cast<double>()).abs().maxCoeff();
}

/// Direct 6-nested-loop grouped convolution in double.
inline std::vector<double> naive_conv2d(const std::vector<double>& x, Index n, Index ci, Index h, Index w,
                                        const std::vector<double>& wt, Index co, Index kh, Index kw,
                                        const std::vector<double>& bias, Index stride, Index pad, Index groups,
                                        Index& ho, Index& wo) {
  ho = (h + 2 * pad - kh) / stride + 1;
  wo = (w + 2 * pad - kw) / stride + 1;
  const Index cig = ci / groups, cog = co / groups;
  std::vector<double> y(static_cast<std::size_t>(n * co * ho * wo), 0.0);
  for (Index b = 0; b < n; ++b)
    for (Index o = 0; o < co; ++o)
      for (Index oy = 0; oy < ho; ++oy)
        for (Index ox = 0; ox < wo; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
          const Index g = o / cog;
          for (Index c = 0; c < cig; ++c)
            for (Index i = 0; i < kh; ++i)
              for (Index j = 0; j < kw; ++j) {
                const Index iy = oy * stride - pad + i, ix = ox * stride - pad + j;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += x[static_cast<std::size_t>(((b * ci + g * cig + c) * h + iy) * w + ix)] *
                       wt[static_cast<std::size_t>(((o * cig + c) * kh + i) * kw + j)];
              }
          y[static_cast<std::size_t>(((b * co + o) * ho + oy) * wo + ox)] = acc;
        }
  return y;
}

template <typename Scalar>
std::vector<double> to_vec(const Tensor<Scalar>& t) {
  std::vector<double> v(static_cast<std::size_t>(t.numel()));
  for (Index i = 0; i < t.numel(); ++i) v[static_cast<std::size_t>(i)] = static_cast<double>(t.data()[i]);
  return v;
}

}  // namespace slimnet::testing

#endif  // SLIMNET_TESTS_TEST_UTIL_HPP_
