// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: train, eval, count, bench, export, report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "slimnet/config.hpp"
#include "slimnet/deploy.hpp"
#include "slimnet/report.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace slimnet;

namespace {

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

// Flags that override the config file.
struct Overrides {
  std::string config_path;
  std::optional<std::string> arch, widths, bn_mode, mode, output_dir, schedule, data_source;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, divisor;
  std::optional<Index> batch_size, train_size, test_size;
  std::optional<double> lr;
};

void add_config_flags(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("--arch", o.arch, "desknet | mobilenet_v1");
  app->add_option("--widths", o.widths, "switchable width list, e.g. 0.25,0.5,0.75,1.0");
  app->add_option("--bn-mode", o.bn_mode, "private | shared-gb | naive");
  app->add_option("--mode", o.mode, "slim | naive | incremental | individual");
  app->add_option("--seed", o.seed, "run seed");
  app->add_option("--epochs", o.epochs, "training epochs");
  app->add_option("--divisor", o.divisor, "channel rounding divisor");
  app->add_option("--batch-size", o.batch_size, "mini-batch size");
  app->add_option("--lr", o.lr, "initial learning rate");
  app->add_option("--schedule", o.schedule, "constant | exponential | linear | step");
  app->add_option("--data", o.data_source, "synthetic | idx");
  app->add_option("--train-size", o.train_size, "synthetic training samples");
  app->add_option("--test-size", o.test_size, "synthetic test samples");
  app->add_option("--output-dir", o.output_dir, "directory for run outputs");
}

// Defaults, then the config file, then flags.
RunConfig resolve(const Overrides& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) cfg = load_config(o.config_path, cfg);
  try {
    if (o.arch) cfg.arch = *o.arch;
    if (o.widths) cfg.widths = SwitchableWidthList::parse(*o.widths);
    if (o.bn_mode) cfg.bn_mode = parse_bn_mode(*o.bn_mode);
    if (o.mode) cfg.mode = parse_train_mode(*o.mode);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.divisor) cfg.rounding_divisor = *o.divisor;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.lr) cfg.optim.lr = *o.lr;
  if (o.schedule) cfg.optim.schedule = *o.schedule;
  if (o.data_source) cfg.data.source = *o.data_source;
  if (o.train_size) cfg.data.train_size = *o.train_size;
  if (o.test_size) cfg.data.test_size = *o.test_size;
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

json errors_json(const std::vector<std::pair<double, double>>& errs) {
  json j = json::object();
  for (auto [w, e] : errs) j[WidthMultiplier(w).str()] = e;
  return j;
}

int cmd_train(const Overrides& o) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const Datasets data = load_datasets(cfg);
  std::cerr << "run " << run_hash(cfg) << ": " << cfg.arch << " " << cfg.widths.str() << " mode "
            << to_string(cfg.mode) << " bn " << to_string(cfg.effective_bn_mode()) << "\n";
  RunOutcome out;
  try {
    out = run_training(cfg, data, [](const ReportRow& r) {
      if (r.split == "test") {
        std::cerr << "epoch " << r.epoch << " " << WidthMultiplier(r.width).str() << "x test error "
                  << std::setprecision(4) << r.error << "\n";
      }
    });
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    json s = {{"version", 1}, {"run_hash", run_hash(cfg)}, {"status", "diverged"}, {"message", e.what()}};
    write_text(dir / "summary.json", s.dump(2) + "\n");
    return kExitDiverged;
  }

  std::ostringstream curves;
  out.report.write_csv(curves);
  write_text(dir / "curves.csv", curves.str());
  write_text(dir / "config.json", config_to_json(cfg) + "\n");

  json checkpoints = json::array();
  for (const auto& m : out.models) {
    CheckpointMeta meta;
    meta.seed = cfg.seed;
    meta.epochs = cfg.epochs;
    meta.mode = to_string(cfg.mode);
    meta.run_hash = out.hash;
    meta.curves_csv = curves.str();
    for (auto [w, e] : out.test_errors) {
      if (!m.width || *m.width == w) meta.final_errors[WidthMultiplier(w).str()] = e;
    }
    const std::string name = m.width ? "model_" + WidthMultiplier(*m.width).str() + ".ckpt" : "model.ckpt";
    save_checkpoint(dir / name, m.model, meta);
    checkpoints.push_back(name);
  }

  json summary = {{"version", 1},
                  {"status", "ok"},
                  {"run_hash", out.hash},
                  {"mode", to_string(cfg.mode)},
                  {"bn_mode", to_string(cfg.effective_bn_mode())},
                  {"epochs", cfg.epochs},
                  {"final_test_error", errors_json(out.test_errors)},
                  {"final_train_error", errors_json(out.train_errors)},
                  {"wall_seconds", out.report.wall_seconds},
                  {"checkpoints", checkpoints}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_eval(const Overrides& o, const std::string& ckpt_path) {
  const RunConfig cfg = resolve(o);
  Checkpoint ck = load_checkpoint(ckpt_path);
  const Datasets data = load_datasets(cfg);
  json errs = json::object();
  for (const auto& w : ck.model.widths()) {
    const EvalResult r = evaluate(ck.model, data.test, w);
    errs[w.str()] = {{"error", r.error}, {"loss", r.loss}, {"samples", r.samples}};
  }
  std::cout << json{{"version", 1}, {"checkpoint", ckpt_path}, {"test", errs}}.dump(2) << "\n";
  return 0;
}

int cmd_count(const Overrides& o, std::optional<int> resolution, bool as_json) {
  const RunConfig cfg = resolve(o);
  const int classes = cfg.arch == "mobilenet_v1" ? 1000 : cfg.data.classes;
  const int res = resolution.value_or(cfg.arch == "mobilenet_v1" ? 224 : cfg.data.resolution);
  const int in_ch = cfg.arch == "mobilenet_v1" ? 3 : cfg.data.synth.channels;
  const ArchSpec arch = build_run_arch(cfg, in_ch, classes, res);
  json rows = json::array();
  if (!as_json) std::cout << std::left << std::setw(8) << "width" << std::setw(14) << "conv_fc" << std::setw(10)
                          << "bn" << "flops\n";
  for (const auto& w : cfg.widths) {
    const ParamCount p = count_params(arch, w);
    const std::int64_t f = count_flops(arch, w, res);
    rows.push_back({{"width", w.value()}, {"conv_fc", p.conv_fc}, {"bn", p.bn}, {"flops", f}});
    if (!as_json) std::cout << std::setw(8) << w.str() << std::setw(14) << p.conv_fc << std::setw(10) << p.bn << f
                            << "\n";
  }
  if (as_json) std::cout << json{{"version", 1}, {"arch", cfg.arch}, {"resolution", res}, {"switches", rows}}.dump(2)
                         << "\n";
  return 0;
}

Shape parse_shape(const std::string& text) {
  Shape s;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) s.push_back(std::stol(item));
  if (s.size() != 4) throw ConfigError("--shape takes N,C,H,W");
  return s;
}

int cmd_bench(const std::string& ckpt_path, const std::string& shape_text, int warmup, int reps, int threads,
              std::optional<double> budget, const std::string& out_path) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const ArchSpec& a = ck.model.arch();
  const Shape shape = shape_text.empty() ? Shape{1, a.in_channels, a.resolution, a.resolution} : parse_shape(shape_text);
  const LatencyProfile prof = profile_switches(ck.model, shape, warmup, reps, threads);
  for (const auto& w : prof.warnings) std::cerr << "warning: " << w << "\n";
  json j = json::parse(prof.to_json());
  if (budget) {
    const Selection s = select_switch(prof, *budget);
    j["selection"] = {{"budget_ms", *budget},
                      {"width", s.width},
                      {"median_ms", s.median_ms},
                      {"budget_infeasible", s.budget_infeasible}};
  }
  if (!out_path.empty()) write_text(out_path, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_export(const std::string& ckpt_path, double width, const std::string& out_path) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const FusedNet net = export_fused(ck.model, WidthMultiplier(width));
  save_fused(out_path, net);
  const ParamCount p = net.param_count();
  std::cout << "exported " << WidthMultiplier(width).str() << "x to " << out_path << " (" << p.conv_fc
            << " conv/fc params, " << p.bn << " folded bn params)\n";
  return 0;
}

int cmd_report(const std::string& ckpt_path, const std::string& out_dir) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  fs::create_directories(out_dir);
  std::ostringstream values;
  write_bn_values_csv(ck.model, values);
  write_text(fs::path(out_dir) / "bn_values.csv", values.str());
  const auto div = bn_divergence(ck.model);
  std::ostringstream dcsv;
  write_bn_divergence_csv(div, dcsv);
  write_text(fs::path(out_dir) / "bn_divergence.csv", dcsv.str());
  if (!ck.meta.curves_csv.empty()) write_text(fs::path(out_dir) / "curves.csv", ck.meta.curves_csv);
  std::cout << dcsv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slimmable network trainer and deployment tool"};
  app.require_subcommand(1);

  Overrides o;
  std::string ckpt, out, shape, out_dir = ".";
  std::optional<int> resolution;
  std::optional<double> budget;
  double width = 1.0;
  bool as_json = false;
  int warmup = 5, reps = 50, threads = 1;

  CLI::App* train = app.add_subcommand("train", "train a model and write checkpoint, curves and summary");
  add_config_flags(train, o);

  CLI::App* eval = app.add_subcommand("eval", "test error of every switch of a checkpoint");
  add_config_flags(eval, o);
  eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();

  CLI::App* count = app.add_subcommand("count", "parameters and multiply-adds per switch");
  add_config_flags(count, o);
  count->add_option("--resolution", resolution, "input resolution");
  count->add_flag("--json", as_json, "emit JSON");

  CLI::App* bench = app.add_subcommand("bench", "latency profile per switch, optional switch selection");
  bench->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  bench->add_option("--shape", shape, "input shape N,C,H,W");
  bench->add_option("--warmup", warmup, "untimed runs")->check(CLI::NonNegativeNumber);
  bench->add_option("--reps", reps, "timed runs")->check(CLI::PositiveNumber);
  bench->add_option("--threads", threads, "inference threads")->check(CLI::PositiveNumber);
  bench->add_option("--budget-ms", budget, "latency budget for switch selection");
  bench->add_option("--out", out, "write the profile JSON here");

  CLI::App* exp = app.add_subcommand("export", "fold batch norms and write a standalone model for one switch");
  exp->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  exp->add_option("--width", width, "switch to export")->required();
  exp->add_option("--out", out, "output file")->required();

  CLI::App* report = app.add_subcommand("report", "batch-norm values, divergence and curves as CSV");
  report->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  report->add_option("--out-dir", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o, ckpt);
    if (*count) return cmd_count(o, resolution, as_json);
    if (*bench) return cmd_bench(ckpt, shape, warmup, reps, threads, budget, out);
    if (*exp) return cmd_export(ckpt, width, out);
    if (*report) return cmd_report(ckpt, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const WidthError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
