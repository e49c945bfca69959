// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SLIMNET_TESTS_GRADCHECK_HPP_
#define SLIMNET_TESTS_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "slimnet/ops.hpp"
#include "test_util.hpp"

namespace slimnet::testing {

using D = Tensor<double>;
using ScalarFn = std::function<D(const std::vector<D>&)>;

/**
 * Central-difference gradient check in double precision. Returns the worst
 * normwise relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
 * over all inputs that require a gradient.
 */
inline double gradcheck(const ScalarFn& f, std::vector<D> inputs, double eps = 1e-3) {
  for (auto& t : inputs) t.drop_grad();
  {
    Tape<double> tape;
    D loss;
    {
      TapeScope<double> scope(tape);
      loss = f(inputs);
    }
    tape.backward(loss);
  }
  double worst = 0.0;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    const D::Array analytic = t.has_grad() ? t.grad() : D::Array::Zero(t.numel());
    D::Array numeric(t.numel());
    for (Index i = 0; i < t.numel(); ++i) {
      const double orig = t.data()[i];
      t.data()[i] = orig + eps;
      const double up = f(inputs).item();
      t.data()[i] = orig - eps;
      const double down = f(inputs).item();
      t.data()[i] = orig;
      numeric[i] = (up - down) / (2 * eps);
    }
    const double scale = std::max({analytic.matrix().norm(), numeric.matrix().norm(), 1e-12});
    worst = std::max(worst, (analytic - numeric).matrix().norm() / scale);
  }
  return worst;
}

/// Random tensor whose entries avoid a band around zero (keeps ReLU off its kink).
inline D random_away_from_zero(Shape shape, std::mt19937_64& rng, double band = 0.05) {
  D t = random_tensor<double>(std::move(shape), rng, 1.0, true);
  for (Index i = 0; i < t.numel(); ++i) {
    double& v = t.data()[i];
    if (std::abs(v) < band) v = v < 0 ? v - band : v + band;
  }
  return t;
}

/// Contracts an op's output with fixed random weights into a scalar.
inline D contract(const D& y, const D& weights) { return sum(mul(y, weights)); }

struct OpCheck {
  std::string name;
  double rel_err;
};

/// Finite-difference check of every differentiable op for one seed.
inline std::vector<OpCheck> check_all_ops(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<OpCheck> out;
  auto rnd = [&](Shape s, bool grad = true) { return random_tensor<double>(std::move(s), rng, 1.0, grad); };

  struct ConvCase {
    const char* name;
    Index n, ci, h, co, k, stride, pad, groups;
    bool bias;
  };
  const ConvCase convs[] = {{"conv2d", 2, 3, 5, 4, 3, 1, 1, 1, true},
                            {"conv2d_stride2", 1, 2, 6, 3, 3, 2, 1, 1, false},
                            {"conv2d_grouped", 2, 4, 4, 6, 3, 1, 1, 2, true},
                            {"depthwise_conv2d", 2, 3, 5, 3, 3, 2, 1, 3, false},
                            {"conv2d_pointwise", 2, 5, 3, 4, 1, 1, 0, 1, true}};
  for (const ConvCase& c : convs) {
    D x = rnd({c.n, c.ci, c.h, c.h});
    D w = rnd({c.co, c.ci / c.groups, c.k, c.k});
    std::vector<D> in{x, w};
    if (c.bias) in.push_back(rnd({c.co}));
    const Index ho = (c.h + 2 * c.pad - c.k) / c.stride + 1;
    D r = rnd({c.n, c.co, ho, ho}, false);
    const Conv2dOptions opt{c.stride, c.pad, c.groups};
    out.push_back({c.name, gradcheck(
                               [&](const std::vector<D>& v) {
                                 return contract(conv2d(v[0], v[1], v.size() > 2 ? v[2] : D(), opt), r);
                               },
                               in)});
  }
  {
    D r = rnd({3, 4}, false);
    out.push_back({"linear", gradcheck([&](const std::vector<D>& v) { return contract(linear(v[0], v[1], v[2]), r); },
                                       {rnd({3, 5}), rnd({4, 5}), rnd({4})})});
  }
  {
    D r = rnd({2, 3, 4, 4}, false);
    out.push_back({"relu", gradcheck([&](const std::vector<D>& v) { return contract(relu(v[0]), r); },
                                     {random_away_from_zero({2, 3, 4, 4}, rng)})});
  }
  {
    D r = rnd({2, 3}, false);
    out.push_back({"global_avg_pool",
                   gradcheck([&](const std::vector<D>& v) { return contract(global_avg_pool(v[0]), r); },
                             {rnd({2, 3, 4, 5})})});
  }
  {
    D r = rnd({3, 4}, false);
    out.push_back({"add", gradcheck([&](const std::vector<D>& v) { return contract(add(v[0], v[1]), r); },
                                    {rnd({3, 4}), rnd({3, 4})})});
    out.push_back({"mul", gradcheck([&](const std::vector<D>& v) { return sum(mul(mul(v[0], v[1]), r)); },
                                    {rnd({3, 4}), rnd({3, 4})})});
  }
  {
    std::uniform_int_distribution<int> lab(0, 6);
    std::vector<int> labels(5);
    for (int& l : labels) l = lab(rng);
    out.push_back({"softmax_cross_entropy",
                   gradcheck([&](const std::vector<D>& v) { return softmax_cross_entropy(v[0], labels); },
                             {random_tensor<double>({5, 7}, rng, 2.0, true)})});
  }
  {
    D r = rnd({3, 2, 3, 3}, false);
    out.push_back({"slice_prefix",
                   gradcheck([&](const std::vector<D>& v) { return contract(slice_prefix(v[0], {3, 2, 3, 3}), r); },
                             {rnd({5, 4, 3, 3})})});
  }
  {
    D r = rnd({3, 4, 3, 3}, false);
    out.push_back({"batch_norm_train", gradcheck(
                                           [&](const std::vector<D>& v) {
                                             return contract(batch_norm_train(v[0], v[1], v[2], 1e-5).y, r);
                                           },
                                           {rnd({3, 4, 3, 3}), rnd({4}), rnd({4})})});
  }
  {
    D r = rnd({2, 4, 3, 3}, false);
    const D::Array mean = rnd({4}, false).data();
    const D::Array var = rnd({4}, false).data().abs() + 0.5;
    out.push_back({"batch_norm_eval", gradcheck(
                                          [&](const std::vector<D>& v) {
                                            return contract(batch_norm_eval(v[0], v[1], v[2], mean, var, 1e-5), r);
                                          },
                                          {rnd({2, 4, 3, 3}), rnd({4}), rnd({4})})});
  }
  return out;
}

}  // namespace slimnet::testing

#endif  // SLIMNET_TESTS_GRADCHECK_HPP_
