// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "slimnet/ops.hpp"
#include "test_util.hpp"

using namespace slimnet;
using slimnet::testing::max_abs_diff;
using slimnet::testing::random_tensor;
using T = Tensor<float>;

TEST_CASE("tensor invariants") {
  T t(Shape{2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK_FALSE(t.has_grad());
  CHECK_THROWS_AS(T(Shape{2, 2}, T::Array::Zero(3)), ShapeError);
  t.grad_buffer()[0] = 2.f;
  CHECK(t.grad().size() == t.numel());
  T c = t.clone();
  c.data()[0] = -1.f;
  CHECK(t.data()[0] == 1.5f);
}

TEST_CASE("conv2d 1x1 identity permutation kernel is a passthrough") {
  std::mt19937_64 rng(1);
  T x = random_tensor<float>({2, 4, 5, 5}, rng);
  T w(Shape{4, 4, 1, 1});
  for (Index o = 0; o < 4; ++o) w.data()[o * 4 + o] = 1.f;
  T b = T::zeros({4});
  T y = conv2d(x, w, b);
  CHECK(y.shape() == x.shape());
  CHECK(max_abs_diff(y.data(), x.data()) == 0.0);
}

TEST_CASE("conv2d all-ones 3x3 sums to 9") {
  T y = conv2d(T::ones({1, 1, 3, 3}), T::ones({1, 1, 3, 3}));
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 9.f);
}

TEST_CASE("conv2d matches direct summation oracle") {
  struct Case {
    Index n, ci, h, w, co, k, stride, pad, groups;
  };
  const Case cases[] = {{1, 4, 8, 8, 6, 3, 1, 1, 1}, {2, 3, 7, 9, 5, 3, 2, 1, 1}, {2, 6, 6, 6, 4, 3, 1, 0, 2},
                        {1, 5, 8, 8, 5, 3, 2, 1, 5}, {3, 8, 4, 4, 16, 1, 1, 0, 1}};
  std::mt19937_64 rng(7);
  for (const Case& c : cases) {
    T x = random_tensor<float>({c.n, c.ci, c.h, c.w}, rng);
    T w = random_tensor<float>({c.co, c.ci / c.groups, c.k, c.k}, rng);
    T b = random_tensor<float>({c.co}, rng);
    T y = conv2d(x, w, b, {c.stride, c.pad, c.groups});
    Index ho = 0, wo = 0;
    auto ref = slimnet::testing::naive_conv2d(slimnet::testing::to_vec(x), c.n, c.ci, c.h, c.w,
                                              slimnet::testing::to_vec(w), c.co, c.k, c.k,
                                              slimnet::testing::to_vec(b), c.stride, c.pad, c.groups, ho, wo);
    REQUIRE(y.shape() == Shape{c.n, c.co, ho, wo});
    double worst = 0;
    for (Index i = 0; i < y.numel(); ++i) worst = std::max(worst, std::abs(y.data()[i] - ref[static_cast<std::size_t>(i)]));
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("conv2d shape errors") {
  CHECK_THROWS_AS(conv2d(T::ones({1, 3, 4, 4}), T::ones({4, 2, 3, 3})), ShapeError);
  CHECK_THROWS_AS(conv2d(T::ones({1, 3, 4, 4}), T::ones({4, 1, 3, 3}), {1, 0, 3}), ShapeError);  // 4 % 3
  CHECK_THROWS_AS(conv2d(T::ones({1, 4, 4, 4}), T::ones({4, 2, 3, 3}), {1, 0, 3}), ShapeError);
  CHECK_THROWS_AS(conv2d(T::ones({1, 3, 4}), T::ones({4, 3, 3, 3})), ShapeError);
}

TEST_CASE("depthwise conv") {
  SUBCASE("delta kernels are identity") {
    std::mt19937_64 rng(3);
    T x = random_tensor<float>({2, 3, 6, 6}, rng);
    T w(Shape{3, 1, 3, 3});
    for (Index c = 0; c < 3; ++c) w.data()[c * 9 + 4] = 1.f;
    T y = depthwise_conv2d(x, w, T(), 1, 1);
    CHECK(max_abs_diff(y.data(), x.data()) == 0.0);
  }
  SUBCASE("equals grouped conv2d") {
    std::mt19937_64 rng(4);
    T x = random_tensor<float>({2, 6, 7, 7}, rng);
    T w = random_tensor<float>({6, 1, 3, 3}, rng);
    T y1 = depthwise_conv2d(x, w, T(), 2, 1);
    T y2 = conv2d(x, w, {2, 1, 6});
    CHECK(max_abs_diff(y1.data(), y2.data()) == 0.0);
  }
  SUBCASE("corner counts valid taps") {
    T x(Shape{1, 3, 4, 4}, 2.f);
    T w(Shape{3, 1, 3, 3}, 0.5f);
    T y = depthwise_conv2d(x, w, T(), 1, 1);
    CHECK(y.data()[0] == doctest::Approx(4.0));
    CHECK(y.data()[5] == doctest::Approx(9.0));  // interior: all 9 taps
  }
}

TEST_CASE("linear") {
  std::mt19937_64 rng(5);
  T x = random_tensor<float>({3, 4}, rng);
  SUBCASE("identity weight") {
    T w(Shape{4, 4});
    for (Index i = 0; i < 4; ++i) w.data()[i * 4 + i] = 1.f;
    CHECK(max_abs_diff(linear(x, w, T::zeros({4})).data(), x.data()) == 0.0);
  }
  SUBCASE("zero weight broadcasts bias") {
    T b = T::from({2}, {0.5f, -1.f});
    T y = linear(x, T::zeros({2, 4}), b);
    for (Index i = 0; i < 3; ++i) {
      CHECK(y.data()[i * 2] == 0.5f);
      CHECK(y.data()[i * 2 + 1] == -1.f);
    }
  }
  SUBCASE("naive dot products") {
    T w = random_tensor<float>({5, 4}, rng);
    T b = random_tensor<float>({5}, rng);
    T y = linear(x, w, b);
    for (Index i = 0; i < 3; ++i)
      for (Index o = 0; o < 5; ++o) {
        double acc = b.data()[o];
        for (Index k = 0; k < 4; ++k) acc += double(x.data()[i * 4 + k]) * w.data()[o * 4 + k];
        CHECK(std::abs(y.data()[i * 5 + o] - acc) < 1e-5);
      }
  }
  CHECK_THROWS_AS(linear(x, T::zeros({2, 5}), T()), ShapeError);
}

TEST_CASE("relu, pooling, add") {
  T r = relu(T::from({2}, {-1.f, 2.f}));
  CHECK(r.data()[0] == 0.f);
  CHECK(r.data()[1] == 2.f);
  T p = global_avg_pool(T({2, 3, 4, 4}, 0.75f));
  CHECK(p.shape() == Shape{2, 3});
  CHECK((p.data() == 0.75f).all());
  std::mt19937_64 rng(6);
  T x = random_tensor<float>({2, 3}, rng);
  T neg(x.shape(), (-x.data()).eval());
  CHECK((add(x, neg).data() == 0.f).all());
  CHECK_THROWS_AS(add(x, T::zeros({3, 2})), ShapeError);
}

TEST_CASE("softmax cross entropy") {
  const std::vector<int> labels{3, 0, 7, 9};
  SUBCASE("uniform logits give ln K") {
    CHECK(softmax_cross_entropy(T::zeros({4, 10}), labels).item() == doctest::Approx(std::log(10.0)).epsilon(1e-6));
  }
  SUBCASE("dominant correct logit gives ~0") {
    T l = T::zeros({4, 10});
    for (Index i = 0; i < 4; ++i) l.data()[i * 10 + labels[static_cast<std::size_t>(i)]] = 1e4f;
    CHECK(softmax_cross_entropy(l, labels).item() < 1e-6);
  }
  SUBCASE("matches 64-bit reference and is shift invariant") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
      T l = random_tensor<float>({4, 10}, rng, 3.0);
      double ref = 0;
      for (Index i = 0; i < 4; ++i) {
        double z = 0;
        for (Index k = 0; k < 10; ++k) z += std::exp(double(l.data()[i * 10 + k]));
        ref += std::log(z) - l.data()[i * 10 + labels[static_cast<std::size_t>(i)]];
      }
      ref /= 4;
      const float loss = softmax_cross_entropy(l, labels).item();
      CHECK(std::abs(loss - ref) / std::abs(ref) < 1e-6);
      T shifted(l.shape(), (l.data() + 123.f).eval());
      CHECK(std::abs(softmax_cross_entropy(shifted, labels).item() - loss) < 1e-6 * std::max(1.0, std::abs(ref)) + 2e-6);
    }
  }
  CHECK_THROWS_AS(softmax_cross_entropy(T::zeros({1, 3}), std::vector<int>{3}), std::out_of_range);
  CHECK_THROWS_AS(softmax_cross_entropy(T::zeros({1, 3}), std::vector<int>{-1}), std::out_of_range);
}

TEST_CASE("backward basics") {
  SUBCASE("d/dx x*x at 3 is 6") {
    T x(Shape{}, 3.f, true);
    Tape<float> tape;
    T y;
    {
      TapeScope<float> scope(tape);
      y = mul(x, x);
    }
    tape.backward(y);
    CHECK(x.grad()[0] == 6.f);
  }
  SUBCASE("two recorded passes accumulate") {
    std::mt19937_64 rng(9);
    T x = random_tensor<float>({2, 3, 5, 5}, rng);
    T w = random_tensor<float>({4, 3, 3, 3}, rng, 1.0, true);
    const std::vector<int> labels{1, 2};
    auto pass = [&] {
      Tape<float> tape;
      T loss;
      {
        TapeScope<float> scope(tape);
        loss = softmax_cross_entropy(global_avg_pool(relu(conv2d(x, w, {1, 1, 1}))), labels);
      }
      tape.backward(loss);
    };
    pass();
    const T::Array g1 = w.grad();
    pass();
    CHECK(max_abs_diff(w.grad(), (2.f * g1).eval()) < 1e-6);
  }
  SUBCASE("tape misuse") {
    T x(Shape{2}, 1.f, true);
    Tape<float> tape;
    T y;
    {
      TapeScope<float> scope(tape);
      y = mul(x, x);
    }
    CHECK_THROWS_AS(tape.backward(y), ShapeError);  // not scalar
    T s(Shape{}, 2.f, true);
    Tape<float> tape2;
    T z;
    {
      TapeScope<float> scope(tape2);
      z = mul(s, s);
    }
    tape2.backward(z);
    CHECK_THROWS_AS(tape2.backward(z), std::logic_error);
  }
  SUBCASE("no tape, no recording") {
    T x(Shape{}, 3.f, true);
    T y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_CASE("slice_prefix copies the leading block and scatters gradients back") {
  std::mt19937_64 rng(10);
  T w = random_tensor<float>({6, 4, 3, 3}, rng, 1.0, true);
  Tape<float> tape;
  T s, loss;
  {
    TapeScope<float> scope(tape);
    s = slice_prefix(w, {3, 2, 3, 3});
    loss = sum(mul(s, s));
  }
  tape.backward(loss);
  for (Index o = 0; o < 6; ++o)
    for (Index i = 0; i < 4; ++i)
      for (Index k = 0; k < 9; ++k) {
        const Index full = (o * 4 + i) * 9 + k;
        if (o < 3 && i < 2) {
          CHECK(s.data()[(o * 2 + i) * 9 + k] == w.data()[full]);
          CHECK(w.grad()[full] == 2.f * w.data()[full]);
        } else {
          CHECK(w.grad()[full] == 0.f);
        }
      }
  CHECK_THROWS_AS(slice_prefix(w, {7, 4, 3, 3}), ShapeError);
  CHECK(slice_prefix(w, {6, 4, 3, 3}).same_storage(w));
}
