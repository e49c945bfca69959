// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "slimnet/arch.hpp"
#include "slimnet/width.hpp"

using namespace slimnet;

namespace {

// Independent MobileNet v1 layer table: (in, out, stride) of each separable block.
struct Block {
  int in, out, stride;
};
const std::vector<Block> kMobileNetBlocks = {{32, 64, 1},   {64, 128, 2},   {128, 128, 1},  {128, 256, 2},
                                             {256, 256, 1}, {256, 512, 2},  {512, 512, 1},  {512, 512, 1},
                                             {512, 512, 1}, {512, 512, 1},  {512, 512, 1},  {512, 1024, 2},
                                             {1024, 1024, 1}};

int round8(double w, int c) {
  if (w == 1.0) return c;
  const int r = static_cast<int>(std::floor(w * c / 8.0 + 0.5)) * 8;
  return std::min(c, std::max(8, r));
}

std::int64_t mobilenet_flops_oracle(double w) {
  std::int64_t total = 0;
  int res = 112;
  const int stem = round8(w, 32);
  total += std::int64_t(res) * res * 9 * 3 * stem;
  for (const Block& b : kMobileNetBlocks) {
    const int cin = round8(w, b.in), cout = round8(w, b.out);
    res = b.stride == 2 ? res / 2 : res;
    total += std::int64_t(res) * res * 9 * cin;     // depthwise
    total += std::int64_t(res) * res * cin * cout;  // pointwise
  }
  total += std::int64_t(round8(w, 1024)) * 1000;
  return total;
}

}  // namespace

TEST_CASE("active_channels examples") {
  CHECK(active_channels(WidthMultiplier(1.0), 64, ChannelRounding{}) == 64);
  CHECK(active_channels(WidthMultiplier(0.25), 32, ChannelRounding::exact()) == 8);
  CHECK(active_channels(WidthMultiplier(0.75), 24, ChannelRounding{}) == 16);
  CHECK(active_channels(WidthMultiplier(1.0), 20, ChannelRounding{}) == 20);
  CHECK(active_channels(WidthMultiplier(0.1), 16, ChannelRounding{}) == 8);
}

TEST_CASE("active_channels is monotone, floored and exact at full width") {
  for (int d : {1, 4, 8}) {
    const ChannelRounding r = ChannelRounding::with_divisor(d);
    for (int c = 1; c <= 96; ++c) {
      int prev = 0;
      for (int k = 1; k <= 100; ++k) {
        const int a = active_channels(WidthMultiplier(k / 100.0), c, r);
        CHECK(a >= prev);
        CHECK(a >= std::min(d, c));
        CHECK(a <= c);
        prev = a;
      }
      CHECK(prev == c);
    }
  }
}

TEST_CASE("width list validation") {
  CHECK_THROWS_AS(WidthMultiplier(0.0), WidthError);
  CHECK_THROWS_AS(WidthMultiplier(1.5), WidthError);
  CHECK_THROWS_AS((SwitchableWidthList{0.5, 0.25}), WidthError);
  CHECK_THROWS_AS((SwitchableWidthList{0.5, 0.5}), WidthError);
  const auto l = SwitchableWidthList::parse("0.25,0.5x,0.75,1.0");
  CHECK(l.size() == 4);
  CHECK(l.index_of(WidthMultiplier(0.75)) == 2);
  CHECK_THROWS_AS(l.index_of(WidthMultiplier(0.3)), WidthError);
  CHECK((SwitchableWidthList{0.5, 1.0}).is_subset_of(l));
}

TEST_CASE("MobileNet v1 parameter counts at full width") {
  const ArchSpec net = build_mobilenet_v1();
  const ParamCount p = count_params(net);
  CHECK(p.conv_fc == 4210088);
  CHECK(p.bn == 21888);
  CHECK(std::round(p.bn_fraction() * 1e5) / 1e3 == doctest::Approx(0.517));
  CHECK(count_bn_params(net) == 21888);

  // Same numbers from the independent table.
  std::int64_t conv = 27 * 32, bn = 2 * 32;
  for (const Block& b : kMobileNetBlocks) {
    conv += 9 * b.in + b.in * b.out;
    bn += 2 * (b.in + b.out);
  }
  conv += 1024 * 1000 + 1000;
  CHECK(p.conv_fc == conv);
  CHECK(p.bn == bn);
}

TEST_CASE("training-convention BN storage per mode") {
  const ArchSpec net = build_mobilenet_v1();
  const std::int64_t one = count_bn_params(net);
  CHECK(count_params(net, WidthMultiplier(1.0), ParamConvention::training, 4, BNMode::private_all).bn == 4 * one * 2);
  CHECK(count_params(net, WidthMultiplier(1.0), ParamConvention::training, 4, BNMode::shared_scale_bias).bn ==
        one + 4 * one);
  CHECK(count_params(net, WidthMultiplier(1.0), ParamConvention::training, 4, BNMode::naive_shared).bn == 2 * one);
}

TEST_CASE("MobileNet v1 multiply-adds match the independent table") {
  const ArchSpec net = build_mobilenet_v1();
  for (double w : {0.25, 0.5, 0.75, 1.0}) {
    CHECK(count_flops(net, WidthMultiplier(w), 224) == mobilenet_flops_oracle(w));
  }
  // Full and quarter width round to the published 569M and 41M.
  CHECK(std::lround(count_flops(net, WidthMultiplier(1.0), 224) / 1e6) == 569);
  CHECK(std::lround(count_flops(net, WidthMultiplier(0.25), 224) / 1e6) == 41);
  // Every channel count is a multiple of 8 at 0.5 and 0.75, so these are exact products.
  CHECK(count_flops(net, WidthMultiplier(0.5), 224) == 149497088);
  CHECK(count_flops(net, WidthMultiplier(0.75), 224) == 325400448);
}

TEST_CASE("closed-form single layer counts") {
  ArchSpec a;
  a.name = "pw";
  a.in_channels = 64;
  a.resolution = 56;
  a.classes = 10;
  a.rounding = ChannelRounding::exact();
  a.layers = {ConvSpec{"pw", 64, 64, 1, 1, 0}, GlobalPoolSpec{}, LinearSpec{"fc", 64, 10}};
  a.validate();
  CHECK(count_flops(a, WidthMultiplier(1.0), 56) == 56LL * 56 * 64 * 64 + 640);

  ArchSpec b = a;
  b.in_channels = 4;
  b.layers = {ConvSpec{"c", 4, 8, 3, 1, 1, ConvMode::normal, 1, false, false}, GlobalPoolSpec{},
              LinearSpec{"fc", 8, 10}};
  b.validate();
  CHECK(count_params(b).conv_fc == 288 + 80 + 10);

  ArchSpec one_bn = a;
  one_bn.layers = {ConvSpec{"pw", 64, 64, 1, 1, 0}, BatchNormSpec{"bn", 64}, GlobalPoolSpec{},
                   LinearSpec{"fc", 64, 10}};
  one_bn.validate();
  CHECK(count_bn_params(one_bn) == 128);
}

TEST_CASE("DeskNet counts equal a hand sum and grow with width") {
  const ArchSpec d = build_desknet();
  // stem 3->16 3x3/2 -> 16x16; dw16 + pw16->32; dw32/2 -> 8x8 + pw32->64; res 2x (64->64 3x3); fc 64->10.
  const std::int64_t flops = 16LL * 16 * 9 * 3 * 16 + 16LL * 16 * 9 * 16 + 16LL * 16 * 16 * 32 + 8LL * 8 * 9 * 32 +
                             8LL * 8 * 32 * 64 + 2 * 8LL * 8 * 9 * 64 * 64 + 640;
  CHECK(count_flops(d, WidthMultiplier(1.0), 32) == flops);
  const std::int64_t params = 27 * 16 + 9 * 16 + 16 * 32 + 9 * 32 + 32 * 64 + 2 * 9 * 64 * 64 + 650;
  CHECK(count_params(d).conv_fc == params);

  std::int64_t prev_f = 0, prev_p = 0;
  for (double w : {0.25, 0.5, 0.75, 1.0}) {
    const std::int64_t f = count_flops(d, WidthMultiplier(w), 32);
    const std::int64_t p = count_params(d, WidthMultiplier(w)).conv_fc;
    CHECK(f > prev_f);
    CHECK(p > prev_p);
    prev_f = f;
    prev_p = p;
  }
}

TEST_CASE("layer widths are consistent and nested") {
  const ArchSpec d = build_desknet();
  std::vector<LayerWidth> prev;
  for (double w : {0.25, 0.5, 0.75, 1.0}) {
    const auto lw = layer_widths(d, WidthMultiplier(w));
    REQUIRE(lw.size() == d.layers.size());
    if (!prev.empty()) {
      for (std::size_t i = 0; i < lw.size(); ++i) {
        CHECK(lw[i].in >= prev[i].in);
        CHECK(lw[i].out >= prev[i].out);
      }
    }
    prev = lw;
  }
  const auto full = layer_widths(d, WidthMultiplier(1.0));
  CHECK(full.back().out == 10);
}

TEST_CASE("scale_arch at w equals the slimmable model at w") {
  const ArchSpec d = build_desknet();
  for (double w : {0.25, 0.5, 0.75}) {
    const ArchSpec s = scale_arch(d, WidthMultiplier(w));
    CHECK(count_flops(s, WidthMultiplier(1.0), 32) == count_flops(d, WidthMultiplier(w), 32));
    CHECK(count_params(s).conv_fc == count_params(d, WidthMultiplier(w)).conv_fc);
  }
}

TEST_CASE("architecture JSON round trip") {
  for (const ArchSpec& a : {build_desknet(), build_mobilenet_v1()}) {
    const std::string j = arch_to_json(a);
    const ArchSpec b = arch_from_json(j);
    CHECK(arch_to_json(b) == j);
    CHECK(count_flops(b, WidthMultiplier(0.5), a.resolution) == count_flops(a, WidthMultiplier(0.5), a.resolution));
  }
  CHECK_THROWS(arch_from_json("{\"name\": 3}"));
  CHECK_THROWS(build_arch("resnet50", 3, 10, 32));
}

TEST_CASE("invalid architectures are rejected") {
  ArchSpec a = build_desknet();
  a.layers.pop_back();
  CHECK_THROWS(a.validate());
  ArchSpec b = build_desknet();
  std::get<ConvSpec>(b.layers[0]).max_out = 17;
  CHECK_THROWS(b.validate());
}
