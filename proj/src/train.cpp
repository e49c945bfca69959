// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "slimnet/train.hpp"

#include <iomanip>
#include <limits>

namespace slimnet {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::slimmable:
      return "slim";
    case TrainMode::naive:
      return "naive";
    case TrainMode::incremental:
      return "incremental";
    case TrainMode::individual:
      return "individual";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "slim" || s == "slimmable_sbn") return TrainMode::slimmable;
  if (s == "naive" || s == "naive_shared_bn") return TrainMode::naive;
  if (s == "incremental") return TrainMode::incremental;
  if (s == "individual") return TrainMode::individual;
  throw std::invalid_argument("unknown train mode '" + s + "' (expected slim|naive|incremental|individual)");
}

void TrainReport::write_csv(std::ostream& os) const {
  os << "epoch,switch,split,error,loss,lr\n";
  const auto flags = os.flags();
  for (const auto& r : rows) {
    os << r.epoch << ',' << WidthMultiplier(r.width).str() << ',' << r.split << ',' << std::setprecision(6)
       << r.error << ',' << r.loss << ',' << r.lr << '\n';
  }
  os.flags(flags);
}

double TrainReport::final_error(double width, const std::string& split) const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (it->split == split && std::abs(it->width - width) < 1e-9) return it->error;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

TrainReport train(SlimmableNet<float>& model, const Dataset& train_set, const Dataset* test_set,
                  const TrainOptions& opts, const std::optional<SwitchableWidthList>& switches,
                  const std::vector<UpdateMask>* masks) {
  if (opts.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  const auto start = std::chrono::steady_clock::now();
  const SwitchableWidthList widths = switches ? *switches : model.widths();

  std::vector<std::size_t> indices;
  for (const auto& w : widths) indices.push_back(model.widths().index_of(w));
  std::vector<UpdateMask> own_masks;
  if (!masks) {
    own_masks = active_masks(model, indices);
    masks = &own_masks;
  }

  Sgd<float> opt(model.parameters(), opts.sgd);
  BatchIterator it(train_set, opts.batch_size, mix_seed(opts.seed ^ 0x5eedba7c4ULL), true, opts.augment);
  const long total = static_cast<long>(opts.epochs) * static_cast<long>(it.batches_per_epoch());
  long iteration = 0;

  TrainReport report;
  auto emit = [&](ReportRow row) {
    if (opts.width_label) row.width = *opts.width_label;
    if (opts.on_row) opts.on_row(row);
    report.rows.push_back(std::move(row));
  };

  for (int e = 0; e < opts.epochs; ++e) {
    it.start_epoch(static_cast<std::uint64_t>(e));
    std::vector<double> loss_sum(widths.size(), 0.0);
    std::vector<Index> hits(widths.size(), 0);
    Index seen = 0;
    double lr = 0.0;
    Batch batch;
    while (it.next(batch)) {
      lr = opts.schedule.at(e, iteration, total);
      const StepResult r = train_step(model, opt, batch.x, batch.y, widths, lr, masks);
      const Index n = batch.x.dim(0);
      for (std::size_t k = 0; k < widths.size(); ++k) {
        loss_sum[k] += r.losses[k] * static_cast<double>(n);
        hits[k] += r.correct[k];
      }
      seen += n;
      ++iteration;
    }
    const int epoch = opts.first_epoch + e;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      emit({epoch, widths[k].value(), "train", 1.0 - static_cast<double>(hits[k]) / static_cast<double>(seen),
            loss_sum[k] / static_cast<double>(seen), lr});
    }
    if (test_set && (opts.eval_each_epoch || e + 1 == opts.epochs)) {
      for (std::size_t k = 0; k < widths.size(); ++k) {
        const EvalResult ev = evaluate(model, *test_set, widths[k]);
        emit({epoch, widths[k].value(), "test", ev.error, ev.loss, lr});
      }
    }
  }
  model.switch_to(widths[widths.size() - 1]);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

TrainReport train_incremental(SlimmableNet<float>& model, WidthMultiplier base, WidthMultiplier extended,
                              const Dataset& train_set, const Dataset* test_set, const TrainOptions& opts) {
  if (!(base < extended)) throw WidthError("incremental training needs base < extended width");
  const std::size_t sb = model.widths().index_of(base);
  const std::size_t se = model.widths().index_of(extended);

  TrainReport report = train(model, train_set, test_set, opts, SwitchableWidthList{base.value()});

  // Start the extended switch's normalization from the base switch on shared channels.
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    auto& bn = model.layer(i).bn;
    if (!bn) continue;
    const Index c = bn->channels(sb);
    if (bn->param_slot(sb) != bn->param_slot(se)) {
      bn->gamma_slots()[bn->param_slot(se)].data().head(c) = bn->gamma_slots()[bn->param_slot(sb)].data().head(c);
      bn->beta_slots()[bn->param_slot(se)].data().head(c) = bn->beta_slots()[bn->param_slot(sb)].data().head(c);
    }
    if (bn->stat_slot(sb) != bn->stat_slot(se)) {
      auto& from = bn->stat_slots()[bn->stat_slot(sb)];
      auto& to = bn->stat_slots()[bn->stat_slot(se)];
      to.mean.head(c) = from.mean.head(c);
      to.var.head(c) = from.var.head(c);
    }
  }

  std::vector<Index> sizes;
  for (const auto& p : model.parameters()) sizes.push_back(p.tensor.numel());
  const std::vector<UpdateMask> masks = subtract_masks(active_masks(model, {se}), active_masks(model, {sb}), sizes);

  TrainOptions phase2 = opts;
  phase2.first_epoch = opts.first_epoch + opts.epochs;
  phase2.seed = mix_seed(opts.seed + 1);
  TrainReport ext = train(model, train_set, test_set, phase2, SwitchableWidthList{extended.value()}, &masks);
  report.rows.insert(report.rows.end(), ext.rows.begin(), ext.rows.end());
  report.wall_seconds += ext.wall_seconds;
  return report;
}

}  // namespace slimnet
