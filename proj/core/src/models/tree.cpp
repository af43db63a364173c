#include "fcf/models/tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fcf/error.hpp"

namespace fcf::models {

double soft_threshold(double g, double alpha) {
  if (g > alpha) return g - alpha;
  if (g < -alpha) return g + alpha;
  return 0.0;
}

double stable_mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double x0 = values.front();
  double acc = 0.0;
  for (double v : values) acc += v - x0;
  return x0 + acc / static_cast<double>(values.size());
}

double RegressionTree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  if (nodes_.empty()) throw Error(ErrorCode::Untrained, "empty tree");
  int i = 0;
  while (nodes_[i].feature >= 0) {
    const TreeNode& n = nodes_[i];
    i = x(n.feature) <= n.threshold ? n.left : n.right;
  }
  return nodes_[i].value;
}

int RegressionTree::depth() const {
  if (nodes_.empty()) return 0;
  std::vector<int> d(nodes_.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const TreeNode& n = nodes_[i];
    if (n.feature >= 0) {
      d[n.left] = d[i] + 1;
      d[n.right] = d[i] + 1;
      best = std::max(best, d[i] + 1);
    }
  }
  return best;
}

void RegressionTree::accumulate_gain(std::vector<double>& importance) const {
  for (const TreeNode& n : nodes_) {
    if (n.feature >= 0) {
      if (static_cast<std::size_t>(n.feature) >= importance.size()) importance.resize(n.feature + 1, 0.0);
      importance[n.feature] += n.gain;
    }
  }
}

namespace {

struct Builder {
  const Eigen::MatrixXd& X;
  std::span<const double> g;
  std::span<const double> h;
  TreeParams params;
  SplitObjective obj;
  std::mt19937_64 rng;
  std::vector<TreeNode> nodes;

  double score(double G, double H) const {
    const double s = soft_threshold(G, obj.alpha);
    const double denom = H + obj.lambda;
    return denom > 0.0 ? s * s / denom : 0.0;
  }

  double leaf_value(const std::vector<int>& rows, double G, double H) const {
    if (obj.newton_leaf) {
      const double denom = H + obj.lambda;
      return denom > 0.0 ? -soft_threshold(G, obj.alpha) / denom : 0.0;
    }
    std::vector<double> t;
    t.reserve(rows.size());
    for (int r : rows) t.push_back(g[r]);
    return stable_mean(t);
  }

  int build(std::vector<int> rows, int depth) {
    double G = 0.0, H = 0.0;
    for (int r : rows) {
      G += g[r];
      H += h[r];
    }
    const int id = static_cast<int>(nodes.size());
    nodes.push_back(TreeNode{});
    nodes[id].count = static_cast<int>(rows.size());
    nodes[id].value = leaf_value(rows, G, H);

    if (depth >= params.max_depth || static_cast<int>(rows.size()) < params.min_samples_split) return id;

    const int p = static_cast<int>(X.cols());
    std::vector<int> features(p);
    std::iota(features.begin(), features.end(), 0);
    if (params.max_features > 0 && params.max_features < p) {
      std::shuffle(features.begin(), features.end(), rng);
      features.resize(params.max_features);
      std::sort(features.begin(), features.end());
    }

    const double parent = score(G, H);
    const double tol = 1e-12 * std::max(1.0, std::abs(parent));
    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;

    std::vector<int> order(rows);
    for (int f : features) {
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double xa = X(a, f), xb = X(b, f);
        return xa < xb || (xa == xb && a < b);
      });
      double gl = 0.0, hl = 0.0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        gl += g[order[i]];
        hl += h[order[i]];
        const double lo = X(order[i], f), hi = X(order[i + 1], f);
        if (!(lo < hi)) continue;
        const double gain = obj.gain_scale * (score(gl, hl) + score(G - gl, H - hl) - parent);
        if (gain > best_gain && gain > tol) {
          best_gain = gain;
          best_feature = f;
          double mid = 0.5 * (lo + hi);
          if (!(mid < hi)) mid = lo;
          best_threshold = mid;
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<int> left, right;
    for (int r : rows) (X(r, best_feature) <= best_threshold ? left : right).push_back(r);
    nodes[id].feature = best_feature;
    nodes[id].threshold = best_threshold;
    nodes[id].gain = best_gain;
    const int l = build(std::move(left), depth + 1);
    const int r = build(std::move(right), depth + 1);
    nodes[id].left = l;
    nodes[id].right = r;
    return id;
  }
};

}  // namespace

RegressionTree grow_tree(const Eigen::MatrixXd& X, std::span<const double> g, std::span<const double> h,
                         std::span<const int> rows, const TreeParams& params, const SplitObjective& objective,
                         std::uint64_t feature_seed) {
  if (rows.empty()) throw Error(ErrorCode::EmptyData, "cannot grow a tree on zero rows");
  if (g.size() != static_cast<std::size_t>(X.rows()) || h.size() != g.size()) {
    throw Error(ErrorCode::ShapeMismatch, "targets and hessians must match the row count");
  }
  Builder b{X, g, h, params, objective, std::mt19937_64(feature_seed), {}};
  b.build(std::vector<int>(rows.begin(), rows.end()), 0);
  return RegressionTree(std::move(b.nodes));
}

}  // namespace fcf::models
