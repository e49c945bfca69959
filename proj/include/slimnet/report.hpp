// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SLIMNET_REPORT_HPP_
#define SLIMNET_REPORT_HPP_

#include <ostream>
#include <string>
#include <vector>

#include "slimnet/model.hpp"

namespace slimnet {

/**
 * Per-channel batch-norm values of every switch. Columns: layer, depth,
 * channel, then gamma_<w>, beta_<w>, mean_<w>, var_<w> for each switch w.
 * Channels a switch does not use are left empty.
 */
void write_bn_values_csv(const SlimmableNet<float>& model, std::ostream& os);

/// Mean absolute pairwise difference between switches over their shared channels.
struct BNDivergence {
  std::string layer;
  int depth = 0;  // position among the batch-norm layers, 0 = shallowest
  double gamma = 0.0;
  double beta = 0.0;
  double mean = 0.0;
  double var = 0.0;
  double total() const { return (gamma + beta + mean + var) / 4.0; }
};

std::vector<BNDivergence> bn_divergence(const SlimmableNet<float>& model);
/// Columns: layer,depth,gamma,beta,mean,var,total.
void write_bn_divergence_csv(const std::vector<BNDivergence>& rows, std::ostream& os);

}  // namespace slimnet

#endif  // SLIMNET_REPORT_HPP_
