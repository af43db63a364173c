#pragma once

#include <cstdint>
#include <vector>

#include "fcf/models/dataset.hpp"
#include "fcf/models/tree.hpp"

namespace fcf::models {

struct ForestConfig {
  int n_trees = 200;
  int max_depth = 8;
  int max_features = 0;  // 0 = all features at every split
  bool bootstrap = true;
  std::uint64_t seed = 7;
};

struct ForestModel {
  std::vector<RegressionTree> trees;
  std::vector<std::uint64_t> tree_seeds;
  std::vector<double> impurity_decrease;  // per feature, summed over trees
  ForestConfig config;

  /// Mean of the tree outputs.
  double predict_raw(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

/// Random forest of variance-reduction trees. Tree i bootstraps with the seed
/// derive_seed(config.seed, i), so the result does not depend on build order.
ForestModel train_random_forest(const TabularDataset& data, const ForestConfig& config = {});

}  // namespace fcf::models
