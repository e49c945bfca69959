// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "slimnet/report.hpp"

#include <algorithm>
#include <iomanip>

namespace slimnet {

void write_bn_values_csv(const SlimmableNet<float>& model, std::ostream& os) {
  const auto& widths = model.widths();
  os << "layer,depth,channel";
  for (const auto& w : widths) {
    const std::string s = w.str();
    os << ",gamma_" << s << ",beta_" << s << ",mean_" << s << ",var_" << s;
  }
  os << '\n';
  const auto flags = os.flags();
  os << std::setprecision(8);
  int depth = 0;
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    const auto& bn = model.layer(i).bn;
    if (!bn) continue;
    for (int c = 0; c < bn->max_channels(); ++c) {
      os << model.layer_name(i) << ',' << depth << ',' << c;
      for (std::size_t s = 0; s < widths.size(); ++s) {
        if (c < bn->channels(s)) {
          os << ',' << bn->gamma(s)[c] << ',' << bn->beta(s)[c] << ',' << bn->mean(s)[c] << ',' << bn->var(s)[c];
        } else {
          os << ",,,,";
        }
      }
      os << '\n';
    }
    ++depth;
  }
  os.flags(flags);
}

std::vector<BNDivergence> bn_divergence(const SlimmableNet<float>& model) {
  std::vector<BNDivergence> out;
  const std::size_t n = model.widths().size();
  int depth = 0;
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    const auto& bn = model.layer(i).bn;
    if (!bn) continue;
    BNDivergence d;
    d.layer = model.layer_name(i);
    d.depth = depth++;
    double count = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        const Index c = std::min(bn->channels(a), bn->channels(b));
        d.gamma += (bn->gamma(a).head(c) - bn->gamma(b).head(c)).abs().cast<double>().sum();
        d.beta += (bn->beta(a).head(c) - bn->beta(b).head(c)).abs().cast<double>().sum();
        d.mean += (bn->mean(a).head(c) - bn->mean(b).head(c)).abs().cast<double>().sum();
        d.var += (bn->var(a).head(c) - bn->var(b).head(c)).abs().cast<double>().sum();
        count += static_cast<double>(c);
      }
    }
    if (count > 0) {
      d.gamma /= count;
      d.beta /= count;
      d.mean /= count;
      d.var /= count;
    }
    out.push_back(d);
  }
  return out;
}

void write_bn_divergence_csv(const std::vector<BNDivergence>& rows, std::ostream& os) {
  os << "layer,depth,gamma,beta,mean,var,total\n";
  const auto flags = os.flags();
  os << std::setprecision(8);
  for (const auto& r : rows) {
    os << r.layer << ',' << r.depth << ',' << r.gamma << ',' << r.beta << ',' << r.mean << ',' << r.var << ','
       << r.total() << '\n';
  }
  os.flags(flags);
}

}  // namespace slimnet
