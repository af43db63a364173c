#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace fcf::models {

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // go left when x[feature] <= threshold
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output
  double gain = 0.0;   // split gain (impurity decrease or second-order gain)
  int count = 0;       // training rows reaching the node, with multiplicity
};

class RegressionTree {
 public:
  RegressionTree() = default;
  explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  int depth() const;
  bool empty() const { return nodes_.empty(); }

  /// Adds each split's gain to importance[feature].
  void accumulate_gain(std::vector<double>& importance) const;

 private:
  std::vector<TreeNode> nodes_;
};

/// Split objective shared by the forest and the booster. Node score is
/// soft_threshold(G, alpha)^2 / (H + lambda) scaled by `gain_scale`; a split
/// is kept only when score(L) + score(R) - score(parent) is positive.
/// With alpha = lambda = 0 and unit hessians this is the SSE decrease.
struct SplitObjective {
  double alpha = 0.0;
  double lambda = 0.0;
  double gain_scale = 1.0;
  bool newton_leaf = false;  // leaf = -ST(G)/(H + lambda) instead of the mean
};

struct TreeParams {
  int max_depth = 8;
  int min_samples_split = 2;
  /// Features examined per split; 0 means all of them.
  int max_features = 0;
};

double soft_threshold(double g, double alpha);

/// Grows a tree on rows `rows` (repeats allowed, e.g. a bootstrap) of X with
/// per-row targets (or gradients) `g` and hessians `h`. Ties between equal
/// gains resolve to the lowest feature index, then the lowest threshold.
RegressionTree grow_tree(const Eigen::MatrixXd& X, std::span<const double> g, std::span<const double> h,
                         std::span<const int> rows, const TreeParams& params, const SplitObjective& objective,
                         std::uint64_t feature_seed = 0);

/// Mean computed as x0 + sum(x_i - x0) / n so identical inputs return x0 exactly.
double stable_mean(std::span<const double> values);

}  // namespace fcf::models
