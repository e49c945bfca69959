// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "slimnet/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace slimnet {

using json = nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + where + key + "': " + e.what());
  }
}

SwitchableWidthList widths_from_json(const json& j) {
  if (j.is_string()) return SwitchableWidthList::parse(j.get<std::string>());
  if (!j.is_array()) throw ConfigError("'widths' must be a list of numbers or a comma-separated string");
  std::vector<WidthMultiplier> ws;
  for (const json& v : j) {
    if (!v.is_number()) throw ConfigError("'widths' entries must be numbers");
    ws.emplace_back(v.get<double>());
  }
  return SwitchableWidthList(std::move(ws));
}

void apply_data(DataConfig& d, const json& j) {
  check_keys(j,
             {"source", "seed", "train_size", "test_size", "classes", "resolution", "synth", "train_images",
              "train_labels", "test_images", "test_labels", "augment"},
             "data.");
  read(j, "source", d.source, "data.");
  if (j.contains("seed")) {
    if (j.at("seed").is_null()) {
      d.seed.reset();
    } else {
      std::uint64_t s = 0;
      read(j, "seed", s, "data.");
      d.seed = s;
    }
  }
  read(j, "train_size", d.train_size, "data.");
  read(j, "test_size", d.test_size, "data.");
  read(j, "classes", d.classes, "data.");
  read(j, "resolution", d.resolution, "data.");
  read(j, "train_images", d.train_images, "data.");
  read(j, "train_labels", d.train_labels, "data.");
  read(j, "test_images", d.test_images, "data.");
  read(j, "test_labels", d.test_labels, "data.");
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    check_keys(s, {"channels", "blobs_per_class", "noise", "jitter", "distractor"}, "data.synth.");
    read(s, "channels", d.synth.channels, "data.synth.");
    read(s, "blobs_per_class", d.synth.blobs_per_class, "data.synth.");
    read(s, "noise", d.synth.noise, "data.synth.");
    read(s, "jitter", d.synth.jitter, "data.synth.");
    read(s, "distractor", d.synth.distractor, "data.synth.");
  }
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    check_keys(a, {"flip", "crop_pad"}, "data.augment.");
    read(a, "flip", d.augment.flip, "data.augment.");
    read(a, "crop_pad", d.augment.crop_pad, "data.augment.");
  }
}

void apply_optim(OptimConfig& o, const json& j) {
  check_keys(j, {"lr", "momentum", "nesterov", "weight_decay", "schedule", "gamma", "milestones", "factor"},
             "optim.");
  read(j, "lr", o.lr, "optim.");
  read(j, "momentum", o.momentum, "optim.");
  read(j, "nesterov", o.nesterov, "optim.");
  read(j, "weight_decay", o.weight_decay, "optim.");
  read(j, "schedule", o.schedule, "optim.");
  read(j, "gamma", o.gamma, "optim.");
  read(j, "milestones", o.milestones, "optim.");
  read(j, "factor", o.factor, "optim.");
}

}  // namespace

void RunConfig::validate() const {
  if (arch != "desknet" && arch != "mobilenet_v1") throw ConfigError("unknown architecture '" + arch + "'");
  if (rounding_divisor && *rounding_divisor < 1) throw ConfigError("rounding_divisor must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (mode == TrainMode::incremental && widths.size() != 2) {
    throw ConfigError("incremental mode takes exactly two widths: base and extended");
  }
  if (data.source == "synthetic") {
    if (data.classes < 2) throw ConfigError("data.classes must be >= 2");
    if (data.train_size < data.classes || data.test_size < 1) throw ConfigError("data sizes are too small");
  } else if (data.source == "idx") {
    if (data.train_images.empty() || data.train_labels.empty() || data.test_images.empty() ||
        data.test_labels.empty()) {
      throw ConfigError("idx data needs train_images, train_labels, test_images and test_labels");
    }
  } else {
    throw ConfigError("unknown data source '" + data.source + "' (synthetic|idx)");
  }
  try {
    sgd().validate();
    (void)schedule();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

LRSchedule RunConfig::schedule() const {
  if (optim.schedule == "constant") return LRSchedule::constant_lr(optim.lr);
  if (optim.schedule == "exponential") return LRSchedule::exponential_lr(optim.lr, optim.gamma);
  if (optim.schedule == "linear") return LRSchedule::linear_lr(optim.lr);
  if (optim.schedule == "step") return LRSchedule::step_lr(optim.lr, optim.milestones, optim.factor);
  throw ConfigError("unknown schedule '" + optim.schedule + "' (constant|exponential|linear|step)");
}

SGDConfig RunConfig::sgd() const {
  SGDConfig c;
  c.lr = optim.lr;
  c.momentum = optim.momentum;
  c.nesterov = optim.nesterov;
  c.weight_decay = optim.weight_decay;
  return c;
}

RunConfig apply_config_json(RunConfig cfg, std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j,
             {"arch", "widths", "rounding_divisor", "bn_mode", "mode", "optim", "data", "seed", "epochs",
              "batch_size", "eval_each_epoch", "output_dir"},
             "");
  try {
    read(j, "arch", cfg.arch, "");
    if (j.contains("widths")) cfg.widths = widths_from_json(j.at("widths"));
    if (j.contains("rounding_divisor")) {
      if (j.at("rounding_divisor").is_null()) {
        cfg.rounding_divisor.reset();
      } else {
        int d = 0;
        read(j, "rounding_divisor", d, "");
        cfg.rounding_divisor = d;
      }
    }
    if (j.contains("bn_mode")) cfg.bn_mode = parse_bn_mode(j.at("bn_mode").get<std::string>());
    if (j.contains("mode")) cfg.mode = parse_train_mode(j.at("mode").get<std::string>());
    read(j, "seed", cfg.seed, "");
    read(j, "epochs", cfg.epochs, "");
    read(j, "batch_size", cfg.batch_size, "");
    read(j, "eval_each_epoch", cfg.eval_each_epoch, "");
    read(j, "output_dir", cfg.output_dir, "");
    if (j.contains("optim")) apply_optim(cfg.optim, j.at("optim"));
    if (j.contains("data")) apply_data(cfg.data, j.at("data"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return apply_config_json(base, ss.str());
}

std::string config_to_json(const RunConfig& cfg) {
  std::vector<double> widths;
  for (const auto& w : cfg.widths) widths.push_back(w.value());
  const DataConfig& d = cfg.data;
  json data = {{"source", d.source},
               {"seed", d.seed ? json(*d.seed) : json(nullptr)},
               {"train_size", d.train_size},
               {"test_size", d.test_size},
               {"classes", d.classes},
               {"resolution", d.resolution},
               {"synth",
                {{"channels", d.synth.channels},
                 {"blobs_per_class", d.synth.blobs_per_class},
                 {"noise", d.synth.noise},
                 {"jitter", d.synth.jitter},
                 {"distractor", d.synth.distractor}}},
               {"train_images", d.train_images},
               {"train_labels", d.train_labels},
               {"test_images", d.test_images},
               {"test_labels", d.test_labels},
               {"augment", {{"flip", d.augment.flip}, {"crop_pad", d.augment.crop_pad}}}};
  const OptimConfig& o = cfg.optim;
  json optim = {{"lr", o.lr},
                {"momentum", o.momentum},
                {"nesterov", o.nesterov},
                {"weight_decay", o.weight_decay},
                {"schedule", o.schedule},
                {"gamma", o.gamma},
                {"milestones", o.milestones},
                {"factor", o.factor}};
  json j = {{"arch", cfg.arch},
            {"widths", widths},
            {"rounding_divisor", cfg.rounding_divisor ? json(*cfg.rounding_divisor) : json(nullptr)},
            {"bn_mode", to_string(cfg.bn_mode)},
            {"mode", to_string(cfg.mode)},
            {"optim", optim},
            {"data", data},
            {"seed", cfg.seed},
            {"epochs", cfg.epochs},
            {"batch_size", cfg.batch_size},
            {"eval_each_epoch", cfg.eval_each_epoch},
            {"output_dir", cfg.output_dir}};
  return j.dump(2);
}

std::string run_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : config_to_json(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ArchSpec build_run_arch(const RunConfig& cfg, int in_channels, int classes, int resolution) {
  ArchSpec arch = build_arch(cfg.arch, in_channels, classes, resolution);
  if (cfg.rounding_divisor) arch.rounding = ChannelRounding::with_divisor(*cfg.rounding_divisor);
  arch.validate();
  return arch;
}

Datasets load_datasets(const RunConfig& cfg) {
  const DataConfig& d = cfg.data;
  if (d.source == "idx") {
    Dataset train = load_idx(d.train_images, d.train_labels, std::nullopt, "train");
    Dataset test = load_idx(d.test_images, d.test_labels, train.stats, "test");
    test.classes = train.classes = std::max(train.classes, test.classes);
    return {std::move(train), std::move(test)};
  }
  if (d.source != "synthetic") throw ConfigError("unknown data source '" + d.source + "'");
  const std::uint64_t seed = d.seed ? *d.seed : cfg.seed;
  Dataset train = synth_dataset(seed, d.train_size, d.classes, d.resolution, "train", d.synth);
  Dataset test = synth_dataset(seed, d.test_size, d.classes, d.resolution, "test", d.synth, train.stats);
  return {std::move(train), std::move(test)};
}

RunOutcome run_training(const RunConfig& cfg, const Datasets& data,
                        const std::function<void(const ReportRow&)>& on_row) {
  cfg.validate();
  const ArchSpec arch = build_run_arch(cfg, static_cast<int>(data.train.channels()), data.train.classes,
                                       static_cast<int>(data.train.resolution()));
  TrainOptions opts;
  opts.epochs = cfg.epochs;
  opts.batch_size = cfg.batch_size;
  opts.sgd = cfg.sgd();
  opts.schedule = cfg.schedule();
  opts.seed = cfg.seed;
  opts.augment = cfg.data.augment;
  opts.eval_each_epoch = cfg.eval_each_epoch;
  opts.on_row = on_row;

  RunOutcome out;
  out.hash = run_hash(cfg);
  const BNMode bn = cfg.effective_bn_mode();
  switch (cfg.mode) {
    case TrainMode::slimmable:
    case TrainMode::naive: {
      SlimmableNet<float> model(arch, cfg.widths, bn, cfg.seed);
      out.report = train(model, data.train, &data.test, opts);
      out.models.push_back({std::move(model), std::nullopt});
      break;
    }
    case TrainMode::incremental: {
      SlimmableNet<float> model(arch, cfg.widths, bn, cfg.seed);
      out.report = train_incremental(model, cfg.widths[0], cfg.widths[1], data.train, &data.test, opts);
      out.models.push_back({std::move(model), std::nullopt});
      break;
    }
    case TrainMode::individual: {
      for (const auto& w : cfg.widths) {
        SlimmableNet<float> model(arch, SwitchableWidthList{w.value()}, bn, cfg.seed);
        TrainReport r = train(model, data.train, &data.test, opts);
        out.report.rows.insert(out.report.rows.end(), r.rows.begin(), r.rows.end());
        out.report.wall_seconds += r.wall_seconds;
        out.models.push_back({std::move(model), w.value()});
      }
      break;
    }
  }
  for (const auto& w : cfg.widths) {
    out.test_errors.emplace_back(w.value(), out.report.final_error(w.value(), "test"));
    out.train_errors.emplace_back(w.value(), out.report.final_error(w.value(), "train"));
  }
  return out;
}

}  // namespace slimnet
