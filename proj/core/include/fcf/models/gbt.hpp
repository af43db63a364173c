#pragma once

#include <vector>

#include "fcf/models/dataset.hpp"
#include "fcf/models/tree.hpp"

namespace fcf::models {

struct GbtConfig {
  int rounds = 200;
  int max_depth = 5;
  double learning_rate = 0.05;
  double alpha = 0.5;   // L1 on leaf weights
  double lambda = 2.0;  // L2 on leaf weights
};

struct GbtModel {
  double base_score = 0.0;
  std::vector<RegressionTree> trees;  // leaf values are unscaled Newton weights
  std::vector<double> loss_log;       // training MSE before round 1, then after each round
  std::vector<double> gain;           // per feature, summed over rounds
  GbtConfig config;

  double predict_raw(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

/// Leaf weight -soft_threshold(G, alpha) / (H + lambda).
double leaf_weight(double G, double H, double alpha, double lambda);

/// Second-order boosting on squared loss (g = prediction - y, h = 1) starting
/// from the mean target.
GbtModel train_gbt(const TabularDataset& data, const GbtConfig& config = {});

}  // namespace fcf::models
