#include "fcf/models/forest.hpp"

#include <numeric>
#include <random>

#include "fcf/error.hpp"
#include "fcf/synth.hpp"

namespace fcf::models {

namespace {
__extension__ typedef unsigned __int128 u128;
}  // namespace

double ForestModel::predict_raw(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  if (trees.empty()) throw Error(ErrorCode::Untrained, "forest has no trees");
  std::vector<double> out;
  out.reserve(trees.size());
  for (const auto& t : trees) out.push_back(t.predict(x));
  return stable_mean(out);
}

ForestModel train_random_forest(const TabularDataset& data, const ForestConfig& config) {
  data.validate();
  if (data.rows() < 2) throw Error(ErrorCode::EmptyData, "forest needs at least 2 samples");
  if (config.n_trees < 1 || config.max_depth < 0) throw Error(ErrorCode::InvalidArgument, "bad forest config");

  const int n = static_cast<int>(data.rows());
  std::vector<double> y(data.y.data(), data.y.data() + n);
  const std::vector<double> ones(static_cast<std::size_t>(n), 1.0);

  TreeParams params;
  params.max_depth = config.max_depth;
  params.max_features = config.max_features;
  SplitObjective obj;  // SSE decrease, mean leaves

  ForestModel model;
  model.config = config;
  model.impurity_decrease.assign(static_cast<std::size_t>(data.cols()), 0.0);
  std::vector<int> rows(static_cast<std::size_t>(n));
  for (int t = 0; t < config.n_trees; ++t) {
    const std::uint64_t seed = synth::derive_seed(config.seed, static_cast<std::uint64_t>(t));
    if (config.bootstrap) {
      std::mt19937_64 rng(seed);
      for (int& r : rows) r = static_cast<int>((static_cast<u128>(rng()) * static_cast<unsigned>(n)) >> 64);
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    model.trees.push_back(grow_tree(data.X, y, ones, rows, params, obj, synth::derive_seed(seed, 1)));
    model.tree_seeds.push_back(seed);
    model.trees.back().accumulate_gain(model.impurity_decrease);
  }
  return model;
}

}  // namespace fcf::models
