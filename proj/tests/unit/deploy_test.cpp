// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "slimnet/deploy.hpp"
#include "slimnet/ops.hpp"
#include "test_util.hpp"

using namespace slimnet;
using slimnet::testing::max_abs_diff;
using slimnet::testing::random_tensor;
using T = Tensor<float>;
using Net = SlimmableNet<float>;

namespace {

const SwitchableWidthList kWidths{0.25, 0.5, 0.75, 1.0};

void randomize_bn(Net& net, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.5f, 1.5f);
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    auto& bn = net.layer(i).bn;
    if (!bn) continue;
    for (auto& g : bn->gamma_slots()) g.data() = g.data().unaryExpr([&](float) { return u(rng); });
    for (auto& b : bn->beta_slots()) b.data() = b.data().unaryExpr([&](float) { return u(rng) - 1.f; });
    for (auto& st : bn->stat_slots()) {
      st.mean = st.mean.unaryExpr([&](float) { return u(rng) - 1.f; });
      st.var = st.var.unaryExpr([&](float) { return u(rng); });
    }
  }
}

Net make_net(BNMode mode, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Net net(build_desknet(), kWidths, mode, seed);
  randomize_bn(net, rng);
  net.set_training(false);
  return net;
}

CheckpointMeta sample_meta() {
  CheckpointMeta m;
  m.seed = 42;
  m.epochs = 3;
  m.mode = "slimmable";
  m.run_hash = "00ff00ff00ff00ff";
  m.final_errors = {{"0.25", 0.125}, {"1", 0.03125}};
  return m;
}

LatencyProfile profile_of(std::vector<std::pair<double, double>> width_ms) {
  LatencyProfile p;
  for (auto [w, ms] : width_ms) p.entries.push_back(summarize_latency({ms}, w, {1, 3, 32, 32}));
  return p;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("slimnet_deploy_test_" + name);
}

}  // namespace

TEST_CASE("checkpoint round trip is byte-exact and reproduces logits bitwise") {
  for (BNMode mode : {BNMode::private_all, BNMode::shared_scale_bias, BNMode::naive_shared}) {
    Net net = make_net(mode, 5);
    const std::string bytes = encode_checkpoint(net, sample_meta());
    CHECK(bytes.substr(0, 8) == "SLIMCKPT");
    Checkpoint ck = decode_checkpoint(bytes);
    CHECK(encode_checkpoint(ck.model, ck.meta) == bytes);
    CHECK(ck.meta.seed == 42);
    CHECK(ck.meta.run_hash == "00ff00ff00ff00ff");
    CHECK(ck.meta.final_errors.at("0.25") == 0.125);
    CHECK(ck.model.bn_mode() == mode);

    std::mt19937_64 rng(3);
    const T x = random_tensor<float>({2, 3, 32, 32}, rng);
    ck.model.set_training(false);
    NoGradScope<float> ng;
    for (WidthMultiplier w : kWidths) {
      net.switch_to(w);
      ck.model.switch_to(w);
      CHECK(max_abs_diff(net.forward(x).data(), ck.model.forward(x).data()) == 0.0);
    }
  }
}

TEST_CASE("checkpoint file round trip and corruption") {
  Net net = make_net(BNMode::private_all, 9);
  const auto path = temp_path("ckpt.bin");
  save_checkpoint(path, net, sample_meta());
  const Checkpoint ck = load_checkpoint(path);
  CHECK(encode_checkpoint(ck.model, ck.meta) == encode_checkpoint(net, sample_meta()));
  std::filesystem::remove(path);

  const std::string bytes = encode_checkpoint(net, sample_meta());
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), CheckpointError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), CheckpointError);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.bin")), CheckpointError);
}

TEST_CASE("frozen BN flag survives a checkpoint") {
  Net net = make_net(BNMode::private_all, 2);
  net.set_bn_frozen(true);
  const Checkpoint ck = decode_checkpoint(encode_checkpoint(net, {}));
  for (std::size_t i = 0; i < ck.model.num_layers(); ++i) {
    if (ck.model.layer(i).bn) CHECK(ck.model.layer(i).bn->frozen());
  }
}

TEST_CASE("fused export matches the slimmable model in eval mode") {
  for (BNMode mode : {BNMode::private_all, BNMode::shared_scale_bias}) {
    Net net = make_net(mode, 11);
    std::mt19937_64 rng(4);
    const T x = random_tensor<float>({3, 3, 32, 32}, rng);
    NoGradScope<float> ng;
    for (WidthMultiplier w : kWidths) {
      net.switch_to(w);
      const T ref = net.forward(x);
      const FusedNet fused = export_fused(net, w);
      CHECK(fused.width == w.value());
      const T out = fused.forward(x);
      REQUIRE(out.shape() == ref.shape());
      CHECK(max_abs_diff(out.data(), ref.data()) < 1e-5 * (1.0 + ref.data().abs().maxCoeff()));
    }
  }
}

TEST_CASE("fused parameter count equals the merged-BN count of the width") {
  Net net = make_net(BNMode::private_all, 1);
  for (WidthMultiplier w : kWidths) {
    const ParamCount fused = export_fused(net, w).param_count();
    const ParamCount merged = count_params(net.arch(), w);
    CHECK(fused.conv_fc == merged.conv_fc);
    CHECK(fused.bn == merged.bn);
  }
}

TEST_CASE("fused model file round trip") {
  Net net = make_net(BNMode::private_all, 6);
  const FusedNet fused = export_fused(net, WidthMultiplier(0.5));
  const std::string bytes = encode_fused(fused);
  CHECK(bytes.substr(0, 8) == "SLIMFUSD");
  const FusedNet back = decode_fused(bytes);
  CHECK(encode_fused(back) == bytes);

  const auto path = temp_path("fused.bin");
  save_fused(path, fused);
  const FusedNet loaded = load_fused(path);
  std::filesystem::remove(path);
  std::mt19937_64 rng(8);
  const T x = random_tensor<float>({2, 3, 32, 32}, rng);
  CHECK(max_abs_diff(fused.forward(x).data(), loaded.forward(x).data()) == 0.0);
  CHECK_THROWS_AS(decode_fused(bytes.substr(0, 20)), CheckpointError);
  CHECK_THROWS_AS(decode_fused(encode_checkpoint(net, {})), CheckpointError);
}

TEST_CASE("export rejects a switch outside the list") {
  Net net = make_net(BNMode::private_all, 1);
  CHECK_THROWS_AS(export_fused(net, WidthMultiplier(0.3)), WidthError);
}

TEST_CASE("latency summary") {
  const LatencyStats one = summarize_latency({4.0}, 1.0, {1, 3, 32, 32});
  CHECK(one.median_ms == 4.0);
  CHECK(one.p95_ms == 4.0);
  CHECK(one.count == 1);

  std::vector<double> s;
  for (int i = 100; i >= 1; --i) s.push_back(i);
  const LatencyStats st = summarize_latency(s, 0.5, {1, 3, 32, 32});
  CHECK(st.median_ms == doctest::Approx(50.5));
  CHECK(st.p95_ms == 95.0);
  CHECK(st.p95_ms >= st.median_ms);
  CHECK_THROWS(summarize_latency({}, 1.0, {}));
}

TEST_CASE("switch selection examples") {
  const LatencyProfile p = profile_of({{0.25, 1.0}, {0.5, 2.0}, {0.75, 3.0}, {1.0, 4.0}});
  CHECK(select_switch(p, 10.0).width == 1.0);
  CHECK(select_switch(p, 4.0).width == 1.0);
  CHECK(select_switch(p, 3.5).width == 0.75);
  CHECK(select_switch(p, 2.0).width == 0.5);
  const Selection none = select_switch(p, 0.5);
  CHECK(none.width == 0.25);
  CHECK(none.budget_infeasible);
  CHECK_FALSE(select_switch(p, 1.0).budget_infeasible);
  CHECK_THROWS(select_switch(p, 0.0));
  CHECK_THROWS(select_switch(LatencyProfile{}, 1.0));
}

TEST_CASE("selected width is non-decreasing in the budget") {
  const LatencyProfile p = profile_of({{0.25, 0.7}, {0.5, 1.9}, {0.75, 3.3}, {1.0, 5.2}});
  double prev = 0.0;
  for (double b = 0.1; b < 8.0; b += 0.05) {
    const Selection s = select_switch(p, b);
    CHECK(s.width >= prev);
    if (!s.budget_infeasible) CHECK(s.median_ms <= b);
    prev = s.width;
  }
}

TEST_CASE("latency profile JSON round trip") {
  LatencyProfile p = profile_of({{0.25, 1.5}, {1.0, 2.5}});
  p.warnings.push_back("example");
  const LatencyProfile q = LatencyProfile::from_json(p.to_json());
  REQUIRE(q.entries.size() == 2);
  CHECK(q.entries[1].width == 1.0);
  CHECK(q.entries[1].median_ms == 2.5);
  CHECK(q.entries[0].input_shape == Shape{1, 3, 32, 32});
  CHECK(q.warnings == p.warnings);
  CHECK(q.to_json() == p.to_json());
  CHECK_THROWS(LatencyProfile::from_json("{\"version\": 2, \"entries\": []}"));
}

TEST_CASE("benchmark and profile on a small model") {
  Net net = make_net(BNMode::private_all, 1);
  const LatencyStats st = benchmark(export_fused(net, WidthMultiplier(1.0)), {2, 3, 32, 32}, 1, 3, 2);
  CHECK(st.count == 3);
  CHECK(st.median_ms > 0.0);
  CHECK(st.p95_ms >= st.median_ms);
  const LatencyProfile prof = profile_switches(net, {1, 3, 32, 32}, 0, 2);
  CHECK(prof.entries.size() == kWidths.size());
  CHECK_THROWS(benchmark(export_fused(net, WidthMultiplier(1.0)), {1, 3, 32, 32}, 0, 0));
}
