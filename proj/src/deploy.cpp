// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "slimnet/deploy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "binary_io.hpp"

namespace slimnet {

namespace {

using detail::FormatError;
using detail::Reader;
using detail::Writer;
using nlohmann::json;

constexpr std::string_view kCheckpointMagic = "SLIMCKPT";
constexpr std::string_view kFusedMagic = "SLIMFUSD";
constexpr std::uint32_t kVersion = 1;

void write_tensor(Writer& w, const Tensor<float>& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape()) w.u64(static_cast<std::uint64_t>(d));
  w.floats(t.ptr(), static_cast<std::size_t>(t.numel()));
}

Tensor<float> read_tensor(Reader& r) {
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw FormatError("implausible tensor rank");
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<Index>(r.u64());
  Tensor<float> t(shape);
  r.floats(t.ptr(), static_cast<std::size_t>(t.numel()));
  return t;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

void check_header(Reader& r, std::string_view magic, const char* what) {
  if (r.take(magic.size()) != magic) throw CheckpointError(std::string(what) + ": bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw CheckpointError(std::string(what) + ": unsupported format version " + std::to_string(version));
  }
}

}  // namespace

std::string encode_checkpoint(const SlimmableNet<float>& model, const CheckpointMeta& meta) {
  Writer out;
  out.raw(kCheckpointMagic);
  out.u32(kVersion);

  Writer arch;
  arch.str(arch_to_json(model.arch()));
  out.section("ARCH", arch);

  Writer widths;
  widths.u32(static_cast<std::uint32_t>(model.widths().size()));
  for (const auto& w : model.widths()) widths.f64(w.value());
  out.section("WDTH", widths);

  Writer mode;
  mode.u8(static_cast<std::uint8_t>(model.bn_mode()));
  out.section("BNMD", mode);

  Writer params;
  const auto ps = model.parameters();
  params.u32(static_cast<std::uint32_t>(ps.size()));
  for (const auto& p : ps) {
    params.str(p.name);
    write_tensor(params, p.tensor);
  }
  out.section("PARM", params);

  Writer stats;
  std::uint32_t nbn = 0;
  for (std::size_t i = 0; i < model.num_layers(); ++i) nbn += model.layer(i).bn ? 1 : 0;
  stats.u32(nbn);
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    const auto& bn = model.layer(i).bn;
    if (!bn) continue;
    stats.u32(static_cast<std::uint32_t>(i));
    stats.u8(bn->frozen() ? 1 : 0);
    stats.u32(static_cast<std::uint32_t>(bn->stat_slots().size()));
    for (const auto& st : bn->stat_slots()) {
      stats.u32(static_cast<std::uint32_t>(st.mean.size()));
      stats.floats(st.mean.data(), static_cast<std::size_t>(st.mean.size()));
      stats.floats(st.var.data(), static_cast<std::size_t>(st.var.size()));
    }
  }
  out.section("STAT", stats);

  Writer m;
  json j = {{"seed", meta.seed},
            {"epochs", meta.epochs},
            {"mode", meta.mode},
            {"run_hash", meta.run_hash},
            {"final_errors", meta.final_errors},
            {"curves_csv", meta.curves_csv}};
  m.str(j.dump());
  out.section("META", m);
  return out.bytes();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  try {
    Reader r(bytes);
    check_header(r, kCheckpointMagic, "checkpoint");

    Reader arch_r = r.section("ARCH");
    const ArchSpec arch = arch_from_json(arch_r.str());

    Reader wr = r.section("WDTH");
    std::vector<WidthMultiplier> ws(wr.u32());
    for (auto& w : ws) w = WidthMultiplier(wr.f64());

    Reader mr = r.section("BNMD");
    const std::uint8_t mode = mr.u8();
    if (mode > static_cast<std::uint8_t>(BNMode::naive_shared)) throw FormatError("unknown BN mode");

    SlimmableNet<float> model(arch, SwitchableWidthList(ws), static_cast<BNMode>(mode), 0);

    Reader pr = r.section("PARM");
    const auto ps = model.parameters();
    if (pr.u32() != ps.size()) throw FormatError("parameter count does not match the architecture");
    for (const auto& p : ps) {
      if (pr.str() != p.name) throw FormatError("parameter order mismatch at " + p.name);
      const Tensor<float> t = read_tensor(pr);
      if (t.shape() != p.tensor.shape()) throw FormatError("shape mismatch for " + p.name);
      Tensor<float> dst = p.tensor;
      dst.data() = t.data();
    }
    pr.expect_done("PARM");

    Reader sr = r.section("STAT");
    const std::uint32_t nbn = sr.u32();
    for (std::uint32_t k = 0; k < nbn; ++k) {
      const std::uint32_t i = sr.u32();
      if (i >= model.num_layers() || !model.layer(i).bn) throw FormatError("statistics for a non-BN layer");
      auto& bn = *model.layer(i).bn;
      bn.set_frozen(sr.u8() != 0);
      if (sr.u32() != bn.stat_slots().size()) throw FormatError("statistics slot count mismatch");
      for (auto& st : bn.stat_slots()) {
        if (sr.u32() != static_cast<std::uint32_t>(st.mean.size())) throw FormatError("statistics size mismatch");
        sr.floats(st.mean.data(), static_cast<std::size_t>(st.mean.size()));
        sr.floats(st.var.data(), static_cast<std::size_t>(st.var.size()));
      }
    }
    sr.expect_done("STAT");

    Reader metar = r.section("META");
    const json j = json::parse(metar.str());
    CheckpointMeta meta;
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.epochs = j.at("epochs").get<int>();
    meta.mode = j.at("mode").get<std::string>();
    meta.run_hash = j.at("run_hash").get<std::string>();
    meta.final_errors = j.at("final_errors").get<std::map<std::string, double>>();
    meta.curves_csv = j.value("curves_csv", std::string());
    r.expect_done("checkpoint");
    return {std::move(model), std::move(meta)};
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const SlimmableNet<float>& model,
                     const CheckpointMeta& meta) {
  write_file(path, encode_checkpoint(model, meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------
// Fused export

namespace {

Tensor<float> slice_copy(const Tensor<float>& t, const Shape& extent) {
  if (!t.defined()) return {};
  NoGradScope<float> no_grad;
  return slice_prefix(t, extent).detach().clone();
}

}  // namespace

FusedNet export_fused(const SlimmableNet<float>& model, WidthMultiplier w) {
  const std::size_t s = model.widths().index_of(w);
  const ArchSpec& arch = model.arch();
  const auto& lw = model.active_widths(s);
  FusedNet net;
  net.arch_name = arch.name;
  net.width = w.value();
  net.in_channels = arch.in_channels;
  net.resolution = arch.resolution;
  net.classes = arch.classes;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& spec = arch.layers[i];
    const auto& layer = model.layer(i);
    FusedLayer f;
    if (const auto* c = std::get_if<ConvSpec>(&spec)) {
      f.kind = FusedLayer::Kind::conv;
      f.name = c->name;
      f.stride = c->stride;
      f.pad = c->pad;
      f.groups = c->mode == ConvMode::depthwise ? lw[i].in : c->mode == ConvMode::group ? c->groups : 1;
      f.weight = slice_copy(layer.weight, Shape{lw[i].out, lw[i].in / f.groups, c->kernel, c->kernel});
      f.bias = slice_copy(layer.bias, Shape{lw[i].out});
      if (i + 1 < arch.layers.size() && std::holds_alternative<BatchNormSpec>(arch.layers[i + 1])) {
        auto [fw, fb] = fuse_into_conv(f.weight, f.bias, *model.layer(i + 1).bn, s);
        f.weight = fw;
        f.bias = fb;
        f.folded_bn = true;
        ++i;
      }
    } else if (std::holds_alternative<BatchNormSpec>(spec)) {
      throw ShapeError("export_fused: batch norm " + model.layer_name(i) + " does not follow a convolution");
    } else if (std::holds_alternative<ReluSpec>(spec)) {
      f.kind = FusedLayer::Kind::relu;
    } else if (std::holds_alternative<GlobalPoolSpec>(spec)) {
      f.kind = FusedLayer::Kind::pool;
    } else if (const auto* l = std::get_if<LinearSpec>(&spec)) {
      f.kind = FusedLayer::Kind::linear;
      f.name = l->name;
      f.weight = slice_copy(layer.weight, Shape{lw[i].out, lw[i].in});
      f.bias = slice_copy(layer.bias, Shape{lw[i].out});
    } else if (std::holds_alternative<ResidualBeginSpec>(spec)) {
      f.kind = FusedLayer::Kind::residual_begin;
    } else {
      f.kind = FusedLayer::Kind::residual_add;
    }
    net.layers.push_back(std::move(f));
  }
  return net;
}

Tensor<float> FusedNet::forward(const Tensor<float>& x) const {
  if (x.rank() != 4 || x.dim(1) != in_channels) {
    throw ShapeError("fused network expects [N," + std::to_string(in_channels) + ",H,W], got " +
                     shape_str(x.shape()));
  }
  NoGradScope<float> no_grad;
  Tensor<float> h = x;
  std::vector<Tensor<float>> skips;
  for (const FusedLayer& l : layers) {
    switch (l.kind) {
      case FusedLayer::Kind::conv:
        h = conv2d(h, l.weight, l.bias, Conv2dOptions{l.stride, l.pad, l.groups});
        break;
      case FusedLayer::Kind::relu:
        h = relu(h);
        break;
      case FusedLayer::Kind::pool:
        h = global_avg_pool(h);
        break;
      case FusedLayer::Kind::linear:
        if (h.rank() == 4) h = Tensor<float>(Shape{h.dim(0), h.numel() / h.dim(0)}, h.data());
        h = linear(h, l.weight, l.bias);
        break;
      case FusedLayer::Kind::residual_begin:
        skips.push_back(h);
        break;
      case FusedLayer::Kind::residual_add:
        if (skips.empty()) throw ShapeError("fused network: unmatched residual add");
        h = add(h, skips.back());
        skips.pop_back();
        break;
    }
  }
  return h;
}

ParamCount FusedNet::param_count() const {
  ParamCount p;
  for (const FusedLayer& l : layers) {
    if (l.kind != FusedLayer::Kind::conv && l.kind != FusedLayer::Kind::linear) continue;
    p.conv_fc += l.weight.numel();
    if (l.folded_bn) {
      p.bn += 2 * l.bias.numel();
    } else if (l.bias.defined()) {
      p.conv_fc += l.bias.numel();
    }
  }
  return p;
}

std::string encode_fused(const FusedNet& net) {
  Writer out;
  out.raw(kFusedMagic);
  out.u32(kVersion);
  Writer head;
  head.str(net.arch_name);
  head.f64(net.width);
  head.u32(static_cast<std::uint32_t>(net.in_channels));
  head.u32(static_cast<std::uint32_t>(net.resolution));
  head.u32(static_cast<std::uint32_t>(net.classes));
  out.section("HEAD", head);
  Writer body;
  body.u32(static_cast<std::uint32_t>(net.layers.size()));
  for (const FusedLayer& l : net.layers) {
    body.u8(static_cast<std::uint8_t>(l.kind));
    body.str(l.name);
    body.u32(static_cast<std::uint32_t>(l.stride));
    body.u32(static_cast<std::uint32_t>(l.pad));
    body.u32(static_cast<std::uint32_t>(l.groups));
    body.u8(l.folded_bn ? 1 : 0);
    body.u8(l.weight.defined() ? 1 : 0);
    if (l.weight.defined()) write_tensor(body, l.weight);
    body.u8(l.bias.defined() ? 1 : 0);
    if (l.bias.defined()) write_tensor(body, l.bias);
  }
  out.section("LAYR", body);
  return out.bytes();
}

FusedNet decode_fused(std::string_view bytes) {
  try {
    Reader r(bytes);
    check_header(r, kFusedMagic, "fused model");
    FusedNet net;
    Reader head = r.section("HEAD");
    net.arch_name = head.str();
    net.width = head.f64();
    net.in_channels = static_cast<int>(head.u32());
    net.resolution = static_cast<int>(head.u32());
    net.classes = static_cast<int>(head.u32());
    Reader body = r.section("LAYR");
    const std::uint32_t n = body.u32();
    for (std::uint32_t k = 0; k < n; ++k) {
      FusedLayer l;
      const std::uint8_t kind = body.u8();
      if (kind > static_cast<std::uint8_t>(FusedLayer::Kind::residual_add)) throw FormatError("unknown layer kind");
      l.kind = static_cast<FusedLayer::Kind>(kind);
      l.name = body.str();
      l.stride = static_cast<int>(body.u32());
      l.pad = static_cast<int>(body.u32());
      l.groups = static_cast<int>(body.u32());
      l.folded_bn = body.u8() != 0;
      if (body.u8()) l.weight = read_tensor(body);
      if (body.u8()) l.bias = read_tensor(body);
      net.layers.push_back(std::move(l));
    }
    body.expect_done("LAYR");
    r.expect_done("fused model");
    return net;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("corrupt fused model: ") + e.what());
  }
}

void save_fused(const std::filesystem::path& path, const FusedNet& net) { write_file(path, encode_fused(net)); }

FusedNet load_fused(const std::filesystem::path& path) { return decode_fused(read_file(path)); }

// ---------------------------------------------------------------------------
// Latency

LatencyStats summarize_latency(std::vector<double> samples_ms, double width, Shape input_shape) {
  if (samples_ms.empty()) throw std::invalid_argument("latency summary needs at least one sample");
  std::sort(samples_ms.begin(), samples_ms.end());
  const std::size_t n = samples_ms.size();
  LatencyStats s;
  s.width = width;
  s.count = static_cast<int>(n);
  s.median_ms = n % 2 ? samples_ms[n / 2] : 0.5 * (samples_ms[n / 2 - 1] + samples_ms[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ms = samples_ms[std::max<std::size_t>(rank, 1) - 1];
  s.input_shape = std::move(input_shape);
  return s;
}

LatencyStats benchmark(const FusedNet& net, const Shape& input_shape, int warmup, int reps, int threads) {
  if (reps < 1) throw std::invalid_argument("benchmark needs reps >= 1");
  if (warmup < 0 || threads < 1) throw std::invalid_argument("benchmark: bad warmup or thread count");
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<float> dist(0.f, 1.f);
  Tensor<float> x(input_shape);
  for (Index i = 0; i < x.numel(); ++i) x.data()[i] = dist(rng);

  const Index n = x.dim(0);
  const int shards = static_cast<int>(std::min<Index>(threads, n));
  std::vector<Tensor<float>> parts;
  if (shards > 1) {
    const Index per = x.numel() / n;
    for (int k = 0; k < shards; ++k) {
      const Index b = n * k / shards, e = n * (k + 1) / shards;
      Shape s = input_shape;
      s[0] = e - b;
      parts.emplace_back(s, typename Tensor<float>::Array(x.data().segment(b * per, (e - b) * per)));
    }
  }
  auto run = [&] {
    if (shards <= 1) {
      (void)net.forward(x);
      return;
    }
    std::vector<std::thread> pool;
    for (const auto& p : parts) pool.emplace_back([&net, &p] { (void)net.forward(p); });
    for (auto& t : pool) t.join();
  };
  for (int i = 0; i < warmup; ++i) run();
  std::vector<double> samples;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run();
    samples.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return summarize_latency(std::move(samples), net.width, input_shape);
}

LatencyProfile profile_switches(const SlimmableNet<float>& model, const Shape& input_shape, int warmup, int reps,
                                int threads) {
  LatencyProfile p;
  for (const auto& w : model.widths()) {
    p.entries.push_back(benchmark(export_fused(model, w), input_shape, warmup, reps, threads));
  }
  for (std::size_t k = 1; k < p.entries.size(); ++k) {
    if (p.entries[k].median_ms < p.entries[k - 1].median_ms) {
      p.monotone = false;
      p.warnings.push_back("median latency at " + WidthMultiplier(p.entries[k].width).str() + "x is below " +
                           WidthMultiplier(p.entries[k - 1].width).str() + "x");
    }
  }
  return p;
}

std::string LatencyProfile::to_json() const {
  json j;
  j["version"] = 1;
  j["monotone"] = monotone;
  j["warnings"] = warnings;
  json es = json::array();
  for (const auto& e : entries) {
    es.push_back({{"width", e.width},
                  {"median_ms", e.median_ms},
                  {"p95_ms", e.p95_ms},
                  {"count", e.count},
                  {"input_shape", e.input_shape}});
  }
  j["entries"] = es;
  return j.dump(2);
}

LatencyProfile LatencyProfile::from_json(std::string_view text) {
  const json j = json::parse(text);
  if (j.at("version").get<int>() != 1) throw std::invalid_argument("unsupported latency profile version");
  LatencyProfile p;
  p.monotone = j.at("monotone").get<bool>();
  p.warnings = j.at("warnings").get<std::vector<std::string>>();
  for (const json& e : j.at("entries")) {
    LatencyStats s;
    s.width = e.at("width").get<double>();
    s.median_ms = e.at("median_ms").get<double>();
    s.p95_ms = e.at("p95_ms").get<double>();
    s.count = e.at("count").get<int>();
    s.input_shape = e.at("input_shape").get<Shape>();
    if (s.count < 1 || !(s.median_ms > 0)) throw std::invalid_argument("latency entries need count >= 1 and positive times");
    p.entries.push_back(std::move(s));
  }
  return p;
}

Selection select_switch(const LatencyProfile& profile, double budget_ms) {
  if (profile.entries.empty()) throw std::invalid_argument("select_switch: empty latency profile");
  if (!(budget_ms > 0)) throw std::invalid_argument("select_switch: budget must be positive");
  std::vector<LatencyStats> es = profile.entries;
  std::sort(es.begin(), es.end(), [](const auto& a, const auto& b) { return a.width < b.width; });
  for (auto it = es.rbegin(); it != es.rend(); ++it) {
    if (it->median_ms <= budget_ms) return {it->width, it->median_ms, false};
  }
  return {es.front().width, es.front().median_ms, true};
}

}  // namespace slimnet
