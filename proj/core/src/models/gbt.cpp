#include "fcf/models/gbt.hpp"

#include <numeric>

#include "fcf/error.hpp"

namespace fcf::models {

double leaf_weight(double G, double H, double alpha, double lambda) {
  return -soft_threshold(G, alpha) / (H + lambda);
}

double GbtModel::predict_raw(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  if (trees.empty() && loss_log.empty()) throw Error(ErrorCode::Untrained, "booster is untrained");
  double sum = 0.0;
  for (const auto& t : trees) sum += t.predict(x);
  return base_score + config.learning_rate * sum;
}

GbtModel train_gbt(const TabularDataset& data, const GbtConfig& config) {
  data.validate();
  if (data.rows() < 2) throw Error(ErrorCode::EmptyData, "booster needs at least 2 samples");
  if (config.rounds < 0 || config.max_depth < 0 || config.lambda < 0.0 || config.alpha < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "bad booster config");
  }
  const int n = static_cast<int>(data.rows());
  GbtModel model;
  model.config = config;
  model.gain.assign(static_cast<std::size_t>(data.cols()), 0.0);
  model.base_score = stable_mean(std::span<const double>(data.y.data(), static_cast<std::size_t>(n)));

  std::vector<double> pred(static_cast<std::size_t>(n), model.base_score);
  std::vector<double> grad(static_cast<std::size_t>(n));
  const std::vector<double> hess(static_cast<std::size_t>(n), 1.0);
  std::vector<int> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), 0);

  auto mse = [&] {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += (pred[i] - data.y(i)) * (pred[i] - data.y(i));
    return acc / n;
  };
  model.loss_log.push_back(mse());

  TreeParams params;
  params.max_depth = config.max_depth;
  SplitObjective obj;
  obj.alpha = config.alpha;
  obj.lambda = config.lambda;
  obj.gain_scale = 0.5;
  obj.newton_leaf = true;

  for (int round = 0; round < config.rounds; ++round) {
    for (int i = 0; i < n; ++i) grad[i] = pred[i] - data.y(i);
    RegressionTree tree = grow_tree(data.X, grad, hess, rows, params, obj);
    for (int i = 0; i < n; ++i) pred[i] += config.learning_rate * tree.predict(data.X.row(i));
    tree.accumulate_gain(model.gain);
    model.trees.push_back(std::move(tree));
    model.loss_log.push_back(mse());
  }
  return model;
}

}  // namespace fcf::models
