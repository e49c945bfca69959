// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

// Builds a plain single-width network by copying the leading blocks of a
// slimmable model's tensors. Used as the reference for sliced execution.

#ifndef SLIMNET_TESTS_SLICE_ORACLE_HPP_
#define SLIMNET_TESTS_SLICE_ORACLE_HPP_

#include "slimnet/model.hpp"

namespace slimnet::testing {

// Copies the leading block of `from` into `to` (same rank, smaller or equal dims).
inline void copy_block(const Tensor<float>& from, Tensor<float>& to) {
  const Shape& fs = from.shape();
  const Shape& ts = to.shape();
  Index inner_from = 1, inner_to = 1;
  for (std::size_t d = 2; d < fs.size(); ++d) {
    inner_from *= fs[d];
    inner_to *= ts[d];
  }
  const Index cols_from = fs.size() > 1 ? fs[1] : 1, cols_to = ts.size() > 1 ? ts[1] : 1;
  for (Index o = 0; o < ts[0]; ++o)
    for (Index i = 0; i < cols_to; ++i)
      for (Index k = 0; k < inner_to; ++k) {
        to.data()[(o * cols_to + i) * inner_to + k] = from.data()[(o * cols_from + i) * inner_from + k];
      }
}

// Standalone single-width network holding the slice of `slim` at switch s.
inline SlimmableNet<float> standalone_from(const SlimmableNet<float>& slim, std::size_t s) {
  SlimmableNet<float> net(scale_arch(slim.arch(), slim.widths()[s]), SwitchableWidthList{1.0}, BNMode::private_all, 99);
  for (std::size_t i = 0; i < slim.num_layers(); ++i) {
    const auto& src = slim.layer(i);
    auto& dst = net.layer(i);
    if (src.weight.defined()) copy_block(src.weight, dst.weight);
    if (src.bias.defined()) copy_block(src.bias, dst.bias);
    if (src.bn) {
      dst.bn->gamma_slots()[0].data() = src.bn->gamma(s);
      dst.bn->beta_slots()[0].data() = src.bn->beta(s);
      dst.bn->stat_slots()[0].mean = src.bn->mean(s);
      dst.bn->stat_slots()[0].var = src.bn->var(s);
    }
  }
  return net;
}

}  // namespace slimnet::testing

#endif  // SLIMNET_TESTS_SLICE_ORACLE_HPP_
