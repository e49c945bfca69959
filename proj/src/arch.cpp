// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "slimnet/arch.hpp"

#include <stdexcept>

#include <json.hpp>

namespace slimnet {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

int conv_groups(const ConvSpec& c, int active_in) {
  switch (c.mode) {
    case ConvMode::depthwise:
      return active_in;
    case ConvMode::group:
      return c.groups;
    case ConvMode::normal:
      break;
  }
  return 1;
}

void append_conv_bn_relu(ArchSpec& a, const std::string& name, int in, int out, int k, int stride, ConvMode mode,
                         bool slim_in = true) {
  ConvSpec c;
  c.name = name;
  c.max_in = in;
  c.max_out = out;
  c.kernel = k;
  c.stride = stride;
  c.pad = k / 2;
  c.mode = mode;
  c.slim_in = slim_in;
  a.layers.emplace_back(c);
  a.layers.emplace_back(BatchNormSpec{name + ".bn", out});
  a.layers.emplace_back(ReluSpec{});
}

}  // namespace

std::vector<LayerWidth> layer_widths(const ArchSpec& arch, WidthMultiplier w) {
  std::vector<LayerWidth> out(arch.layers.size());
  std::vector<int> skips;
  int cur = arch.in_channels;
  auto active = [&](bool slim, int max_c) { return slim ? active_channels(w, max_c, arch.rounding) : max_c; };

  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    LayerWidth& lw = out[i];
    std::visit(Overloaded{
                   [&](const ConvSpec& c) {
                     const int expect = active(c.slim_in, c.max_in);
                     if (expect != cur) {
                       throw std::invalid_argument("layer " + c.name + " expects " + std::to_string(expect) +
                                                   " input channels, receives " + std::to_string(cur));
                     }
                     lw.in = cur;
                     lw.out = active(c.slim_out, c.max_out);
                     lw.groups = conv_groups(c, lw.in);
                     if (c.mode == ConvMode::depthwise && lw.in != lw.out) {
                       throw std::invalid_argument("depthwise layer " + c.name + " has in " + std::to_string(lw.in) +
                                                   " != out " + std::to_string(lw.out));
                     }
                     if (lw.in % lw.groups != 0 || lw.out % lw.groups != 0) {
                       throw std::invalid_argument("group layer " + c.name + " channels not divisible by " +
                                                   std::to_string(lw.groups) + " at width " + w.str());
                     }
                     cur = lw.out;
                   },
                   [&](const BatchNormSpec& b) {
                     if (active(true, b.channels) != cur) {
                       throw std::invalid_argument("batch norm " + b.name + " sized for " +
                                                   std::to_string(b.channels) + " max channels, receives " +
                                                   std::to_string(cur));
                     }
                     lw.in = lw.out = cur;
                   },
                   [&](const LinearSpec& l) {
                     const int expect = active(l.slim_in, l.max_in);
                     if (expect != cur) {
                       throw std::invalid_argument("layer " + l.name + " expects " + std::to_string(expect) +
                                                   " inputs, receives " + std::to_string(cur));
                     }
                     lw.in = cur;
                     lw.out = active(l.slim_out, l.max_out);
                     cur = lw.out;
                   },
                   [&](const ResidualBeginSpec&) { skips.push_back(cur); },
                   [&](const ResidualAddSpec&) {
                     if (skips.empty()) throw std::invalid_argument("residual add without a matching begin");
                     if (skips.back() != cur) {
                       throw std::invalid_argument("residual add joins " + std::to_string(skips.back()) + " and " +
                                                   std::to_string(cur) + " channels");
                     }
                     skips.pop_back();
                   },
                   [&](const auto&) {},
               },
               arch.layers[i]);
  }
  if (!skips.empty()) throw std::invalid_argument("unterminated residual block");
  return out;
}

void ArchSpec::validate() const {
  rounding.validate();
  if (in_channels < 1 || resolution < 1 || classes < 1) {
    throw std::invalid_argument("architecture " + name + " needs positive input channels, resolution and classes");
  }
  layer_widths(*this, WidthMultiplier(1.0));
  int heads = 0;
  for (const auto& l : layers) {
    if (const auto* lin = std::get_if<LinearSpec>(&l); lin && !lin->slim_out) {
      ++heads;
      if (lin->max_out != classes) throw std::invalid_argument("classifier head output != class count");
    }
  }
  if (heads != 1) throw std::invalid_argument("architecture " + name + " must have exactly one classifier head");
  if (!std::holds_alternative<LinearSpec>(layers.back())) {
    throw std::invalid_argument("architecture " + name + " must end with the classifier head");
  }
}

ArchSpec build_mobilenet_v1(int classes, int resolution) {
  ArchSpec a;
  a.name = "mobilenet_v1";
  a.in_channels = 3;
  a.resolution = resolution;
  a.classes = classes;
  a.rounding = ChannelRounding::with_divisor(8);

  append_conv_bn_relu(a, "conv0", 3, 32, 3, 2, ConvMode::normal, /*slim_in=*/false);
  struct Block {
    int in, out, stride;
  };
  const Block blocks[] = {{32, 64, 1},   {64, 128, 2},  {128, 128, 1}, {128, 256, 2},  {256, 256, 1},
                          {256, 512, 2}, {512, 512, 1}, {512, 512, 1}, {512, 512, 1},  {512, 512, 1},
                          {512, 512, 1}, {512, 1024, 2}, {1024, 1024, 1}};
  int idx = 1;
  for (const Block& b : blocks) {
    const std::string base = "block" + std::to_string(idx++);
    append_conv_bn_relu(a, base + ".dw", b.in, b.in, 3, b.stride, ConvMode::depthwise);
    append_conv_bn_relu(a, base + ".pw", b.in, b.out, 1, 1, ConvMode::normal);
  }
  a.layers.emplace_back(GlobalPoolSpec{});
  a.layers.emplace_back(LinearSpec{"fc", 1024, classes, true, true, false});
  a.validate();
  return a;
}

ArchSpec build_desknet(int in_channels, int classes, int resolution) {
  ArchSpec a;
  a.name = "desknet";
  a.in_channels = in_channels;
  a.resolution = resolution;
  a.classes = classes;
  a.rounding = ChannelRounding::with_divisor(4);

  append_conv_bn_relu(a, "stem", in_channels, 16, 3, 2, ConvMode::normal, /*slim_in=*/false);
  append_conv_bn_relu(a, "block1.dw", 16, 16, 3, 1, ConvMode::depthwise);
  append_conv_bn_relu(a, "block1.pw", 16, 32, 1, 1, ConvMode::normal);
  append_conv_bn_relu(a, "block2.dw", 32, 32, 3, 2, ConvMode::depthwise);
  append_conv_bn_relu(a, "block2.pw", 32, 64, 1, 1, ConvMode::normal);

  a.layers.emplace_back(ResidualBeginSpec{});
  append_conv_bn_relu(a, "res.conv1", 64, 64, 3, 1, ConvMode::normal);
  a.layers.emplace_back(ConvSpec{"res.conv2", 64, 64, 3, 1, 1, ConvMode::normal, 1, false, true, true});
  a.layers.emplace_back(BatchNormSpec{"res.conv2.bn", 64});
  a.layers.emplace_back(ResidualAddSpec{});
  a.layers.emplace_back(ReluSpec{});

  a.layers.emplace_back(GlobalPoolSpec{});
  a.layers.emplace_back(LinearSpec{"fc", 64, classes, true, true, false});
  a.validate();
  return a;
}

ArchSpec build_arch(std::string_view name, int in_channels, int classes, int resolution) {
  if (name == "mobilenet_v1") {
    if (in_channels != 3) throw std::invalid_argument("mobilenet_v1 takes 3 input channels");
    return build_mobilenet_v1(classes, resolution);
  }
  if (name == "desknet") return build_desknet(in_channels, classes, resolution);
  throw std::invalid_argument("unknown architecture '" + std::string(name) + "'");
}

ArchSpec scale_arch(const ArchSpec& arch, WidthMultiplier w) {
  const auto widths = layer_widths(arch, w);
  ArchSpec out = arch;
  out.name = arch.name + "@" + w.str();
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    std::visit(Overloaded{
                   [&](ConvSpec& c) {
                     c.max_in = widths[i].in;
                     c.max_out = widths[i].out;
                   },
                   [&](BatchNormSpec& b) { b.channels = widths[i].out; },
                   [&](LinearSpec& l) {
                     l.max_in = widths[i].in;
                     l.max_out = widths[i].out;
                   },
                   [&](auto&) {},
               },
               out.layers[i]);
  }
  out.validate();
  return out;
}

std::int64_t count_bn_params(const ArchSpec& arch) {
  std::int64_t total = 0;
  for (const auto& l : arch.layers) {
    if (const auto* b = std::get_if<BatchNormSpec>(&l)) total += 2 * b->channels;
  }
  return total;
}

ParamCount count_params(const ArchSpec& arch, WidthMultiplier w, ParamConvention convention,
                        std::size_t num_switches, BNMode mode) {
  const auto widths = layer_widths(arch, w);
  ParamCount pc;
  std::int64_t bn_channels = 0;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerWidth& lw = widths[i];
    std::visit(Overloaded{
                   [&](const ConvSpec& c) {
                     pc.conv_fc += std::int64_t{lw.out} * (lw.in / lw.groups) * c.kernel * c.kernel;
                     if (c.has_bias) pc.conv_fc += lw.out;
                   },
                   [&](const LinearSpec& l) {
                     pc.conv_fc += std::int64_t{lw.out} * lw.in;
                     if (l.has_bias) pc.conv_fc += lw.out;
                   },
                   [&](const BatchNormSpec&) { bn_channels += lw.out; },
                   [&](const auto&) {},
               },
               arch.layers[i]);
  }
  if (convention == ParamConvention::merged_bn) {
    pc.bn = 2 * bn_channels;
  } else {
    const auto s = static_cast<std::int64_t>(num_switches);
    switch (mode) {
      case BNMode::private_all:
        pc.bn = 4 * bn_channels * s;
        break;
      case BNMode::shared_scale_bias:
        pc.bn = 2 * bn_channels + 2 * bn_channels * s;
        break;
      case BNMode::naive_shared:
        pc.bn = 4 * bn_channels;
        break;
    }
  }
  return pc;
}

std::int64_t count_flops(const ArchSpec& arch, WidthMultiplier w, int input_resolution) {
  const auto widths = layer_widths(arch, w);
  std::int64_t h = input_resolution, wd = input_resolution;
  std::int64_t total = 0;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerWidth& lw = widths[i];
    if (const auto* c = std::get_if<ConvSpec>(&arch.layers[i])) {
      h = (h + 2 * c->pad - c->kernel) / c->stride + 1;
      wd = (wd + 2 * c->pad - c->kernel) / c->stride + 1;
      total += std::int64_t{lw.out} * h * wd * c->kernel * c->kernel * (lw.in / lw.groups);
    } else if (std::holds_alternative<LinearSpec>(arch.layers[i])) {
      total += std::int64_t{lw.in} * lw.out;
    } else if (std::holds_alternative<GlobalPoolSpec>(arch.layers[i])) {
      h = wd = 1;
    }
  }
  return total;
}

std::string to_string(ConvMode mode) {
  switch (mode) {
    case ConvMode::normal:
      return "normal";
    case ConvMode::depthwise:
      return "depthwise";
    case ConvMode::group:
      return "group";
  }
  return "?";
}

std::string to_string(BNMode mode) {
  switch (mode) {
    case BNMode::private_all:
      return "private";
    case BNMode::shared_scale_bias:
      return "shared-gb";
    case BNMode::naive_shared:
      return "naive";
  }
  return "?";
}

BNMode parse_bn_mode(std::string_view text) {
  if (text == "private") return BNMode::private_all;
  if (text == "shared-gb") return BNMode::shared_scale_bias;
  if (text == "naive") return BNMode::naive_shared;
  throw std::invalid_argument("unknown BN mode '" + std::string(text) + "' (private|shared-gb|naive)");
}

namespace {

ConvMode parse_conv_mode(const std::string& s) {
  if (s == "normal") return ConvMode::normal;
  if (s == "depthwise") return ConvMode::depthwise;
  if (s == "group") return ConvMode::group;
  throw std::invalid_argument("unknown conv mode '" + s + "'");
}

}  // namespace

std::string arch_to_json(const ArchSpec& arch) {
  using nlohmann::json;
  json layers = json::array();
  for (const auto& l : arch.layers) {
    std::visit(Overloaded{
                   [&](const ConvSpec& c) {
                     layers.push_back({{"type", "conv"},
                                       {"name", c.name},
                                       {"max_in", c.max_in},
                                       {"max_out", c.max_out},
                                       {"kernel", c.kernel},
                                       {"stride", c.stride},
                                       {"pad", c.pad},
                                       {"mode", to_string(c.mode)},
                                       {"groups", c.groups},
                                       {"bias", c.has_bias},
                                       {"slim_in", c.slim_in},
                                       {"slim_out", c.slim_out}});
                   },
                   [&](const BatchNormSpec& b) {
                     layers.push_back({{"type", "bn"}, {"name", b.name}, {"channels", b.channels}});
                   },
                   [&](const ReluSpec&) { layers.push_back({{"type", "relu"}}); },
                   [&](const GlobalPoolSpec&) { layers.push_back({{"type", "gap"}}); },
                   [&](const LinearSpec& f) {
                     layers.push_back({{"type", "linear"},
                                       {"name", f.name},
                                       {"max_in", f.max_in},
                                       {"max_out", f.max_out},
                                       {"bias", f.has_bias},
                                       {"slim_in", f.slim_in},
                                       {"slim_out", f.slim_out}});
                   },
                   [&](const ResidualBeginSpec&) { layers.push_back({{"type", "residual_begin"}}); },
                   [&](const ResidualAddSpec&) { layers.push_back({{"type", "residual_add"}}); },
               },
               l);
  }
  json j = {{"name", arch.name},
            {"in_channels", arch.in_channels},
            {"resolution", arch.resolution},
            {"classes", arch.classes},
            {"rounding", {{"divisor", arch.rounding.divisor}, {"floor_min", arch.rounding.floor_min}}},
            {"layers", layers}};
  return j.dump();
}

ArchSpec arch_from_json(std::string_view text) {
  using nlohmann::json;
  const json j = json::parse(text);
  ArchSpec a;
  a.name = j.at("name").get<std::string>();
  a.in_channels = j.at("in_channels").get<int>();
  a.resolution = j.at("resolution").get<int>();
  a.classes = j.at("classes").get<int>();
  a.rounding.divisor = j.at("rounding").at("divisor").get<int>();
  a.rounding.floor_min = j.at("rounding").at("floor_min").get<int>();
  for (const json& l : j.at("layers")) {
    const std::string type = l.at("type").get<std::string>();
    if (type == "conv") {
      ConvSpec c;
      c.name = l.at("name").get<std::string>();
      c.max_in = l.at("max_in").get<int>();
      c.max_out = l.at("max_out").get<int>();
      c.kernel = l.at("kernel").get<int>();
      c.stride = l.at("stride").get<int>();
      c.pad = l.at("pad").get<int>();
      c.mode = parse_conv_mode(l.at("mode").get<std::string>());
      c.groups = l.at("groups").get<int>();
      c.has_bias = l.at("bias").get<bool>();
      c.slim_in = l.at("slim_in").get<bool>();
      c.slim_out = l.at("slim_out").get<bool>();
      a.layers.emplace_back(c);
    } else if (type == "bn") {
      a.layers.emplace_back(BatchNormSpec{l.at("name").get<std::string>(), l.at("channels").get<int>()});
    } else if (type == "relu") {
      a.layers.emplace_back(ReluSpec{});
    } else if (type == "gap") {
      a.layers.emplace_back(GlobalPoolSpec{});
    } else if (type == "linear") {
      LinearSpec f;
      f.name = l.at("name").get<std::string>();
      f.max_in = l.at("max_in").get<int>();
      f.max_out = l.at("max_out").get<int>();
      f.has_bias = l.at("bias").get<bool>();
      f.slim_in = l.at("slim_in").get<bool>();
      f.slim_out = l.at("slim_out").get<bool>();
      a.layers.emplace_back(f);
    } else if (type == "residual_begin") {
      a.layers.emplace_back(ResidualBeginSpec{});
    } else if (type == "residual_add") {
      a.layers.emplace_back(ResidualAddSpec{});
    } else {
      throw std::invalid_argument("unknown layer type '" + type + "'");
    }
  }
  a.validate();
  return a;
}

}  // namespace slimnet
