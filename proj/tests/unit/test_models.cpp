#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "fcf/error.hpp"
#include "fcf/models/model.hpp"

using namespace fcf;
using namespace fcf::models;
namespace fs = std::filesystem;

namespace {

TabularDataset make_random(int n, int p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N;
  TabularDataset d;
  d.X.resize(n, p);
  d.y.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) d.X(i, j) = N(rng);
    d.y(i) = N(rng);
  }
  return d;
}

struct BruteSplit {
  int feature = -1;
  double threshold = 0.0;
  double sse = std::numeric_limits<double>::infinity();
};

double sse_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s;
}

// Tries every midpoint of every feature and scores the partition from scratch.
BruteSplit brute_force_split(const TabularDataset& d) {
  BruteSplit best;
  for (int f = 0; f < d.cols(); ++f) {
    std::vector<double> xs(d.X.col(f).data(), d.X.col(f).data() + d.rows());
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
      if (!(xs[i] < xs[i + 1])) continue;
      const double t = 0.5 * (xs[i] + xs[i + 1]);
      std::vector<double> l, r;
      for (int k = 0; k < d.rows(); ++k) (d.X(k, f) <= t ? l : r).push_back(d.y(k));
      const double s = sse_of(l) + sse_of(r);
      if (s < best.sse - 1e-12) best = {f, t, s};
    }
  }
  return best;
}

RegressionTree stump(const TabularDataset& d, int depth = 1) {
  std::vector<double> g(d.y.data(), d.y.data() + d.rows()), h(d.rows(), 1.0);
  std::vector<int> rows(d.rows());
  std::iota(rows.begin(), rows.end(), 0);
  TreeParams tp;
  tp.max_depth = depth;
  return grow_tree(d.X, g, h, rows, tp, SplitObjective{});
}

}  // namespace

TEST_CASE("OLS") {
  SUBCASE("recovers planted coefficients") {
    auto d = make_random(200, 5, 1);
    const Eigen::VectorXd w = (Eigen::VectorXd(5) << 1.5, -2.0, 0.25, 0.0, 3.0).finished();
    d.y = (d.X * w).array() + 0.7;
    const auto m = train_ols(d);
    CHECK((m.weights - w).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(m.intercept == doctest::Approx(0.7).epsilon(1e-6));
    CHECK_FALSE(m.jittered);
  }
  SUBCASE("constant target gives zero weights") {
    auto d = make_random(40, 3, 2);
    d.y.setConstant(0.4);
    const auto m = train_ols(d);
    CHECK(m.weights.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(m.intercept == doctest::Approx(0.4));
  }
  SUBCASE("duplicate column matches the pseudo-inverse fit") {
    auto d = make_random(60, 3, 3);
    d.X.col(2) = d.X.col(0);
    const auto m = train_ols(d);
    CHECK(m.jittered);
    Eigen::MatrixXd A(60, 4);
    A << d.X, Eigen::VectorXd::Ones(60);
    const Eigen::VectorXd ref = A.completeOrthogonalDecomposition().solve(d.y);
    for (int i = 0; i < 60; ++i) {
      const double p = m.predict_raw(d.X.row(i));
      CHECK(p == doctest::Approx(A.row(i).dot(ref)).epsilon(1e-4));
    }
  }
  SUBCASE("residuals are orthogonal to the design") {
    auto d = make_random(100, 4, 4);
    const auto m = train_ols(d);
    Eigen::VectorXd r(100);
    for (int i = 0; i < 100; ++i) r(i) = d.y(i) - m.predict_raw(d.X.row(i));
    CHECK(std::abs(r.sum()) < 1e-9);
    CHECK((d.X.transpose() * r).cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("underdetermined") {
    CHECK_THROWS_AS(train_ols(make_random(4, 4, 5)), Error);
  }
}

TEST_CASE("depth-1 split matches exhaustive search on 50 datasets") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto d = make_random(30 + static_cast<int>(s % 7), 4, 100 + s);
    const auto oracle = brute_force_split(d);
    const auto tree = stump(d);
    REQUIRE(tree.nodes().size() == 3);
    const auto& root = tree.nodes()[0];
    CHECK(root.feature == oracle.feature);
    CHECK(root.threshold == doctest::Approx(oracle.threshold));
    CHECK(root.gain == doctest::Approx(sse_of({d.y.data(), d.y.data() + d.rows()}) - oracle.sse));
  }
}

TEST_CASE("trees and forests") {
  TabularDataset step;
  step.X.resize(20, 1);
  step.y.resize(20);
  for (int i = 0; i < 20; ++i) {
    step.X(i, 0) = i;
    step.y(i) = i < 10 ? 0.0 : 1.0;
  }
  SUBCASE("a step is fit exactly") {
    const auto f = train_random_forest(step, {.n_trees = 10, .bootstrap = false});
    for (int i = 0; i < 20; ++i) CHECK(f.predict_raw(step.X.row(i)) == step.y(i));
  }
  SUBCASE("constant targets give a constant forest") {
    auto d = make_random(30, 3, 9);
    d.y.setConstant(0.3);
    const auto f = train_random_forest(d, {.n_trees = 5});
    for (const auto& t : f.trees) CHECK(t.nodes().size() == 1);
    CHECK(f.predict_raw(d.X.row(0)) == 0.3);
  }
  SUBCASE("a single tree predicts its leaf means") {
    const auto d = make_random(40, 2, 11);
    const auto tree = stump(d, 2);
    for (int i = 0; i < 40; ++i) {
      const double p = tree.predict(d.X.row(i));
      std::vector<double> same;
      for (int k = 0; k < 40; ++k) {
        if (tree.predict(d.X.row(k)) == p) same.push_back(d.y(k));
      }
      CHECK(p == doctest::Approx(std::accumulate(same.begin(), same.end(), 0.0) / same.size()));
    }
  }
  SUBCASE("seeded determinism") {
    const auto d = make_random(50, 4, 12);
    const auto a = train_random_forest(d, {.n_trees = 20, .seed = 3});
    const auto b = train_random_forest(d, {.n_trees = 20, .seed = 3});
    CHECK(a.impurity_decrease == b.impurity_decrease);
    CHECK(a.predict_raw(d.X.row(1)) == b.predict_raw(d.X.row(1)));
  }
  CHECK_THROWS_AS(RegressionTree{}.predict(step.X.row(0)), Error);
}

TEST_CASE("gradient boosting") {
  CHECK(leaf_weight(10.0, 4.0, 0.5, 2.0) == doctest::Approx(-1.583333333333));
  CHECK(leaf_weight(0.3, 4.0, 0.5, 2.0) == 0.0);
  CHECK(leaf_weight(-10.0, 4.0, 0.5, 2.0) == doctest::Approx(1.583333333333));

  auto d = make_random(80, 4, 21);
  for (int i = 0; i < 80; ++i) d.y(i) = std::sin(d.X(i, 0)) + 0.3 * d.X(i, 1) + 0.05 * d.y(i);
  const auto m = train_gbt(d);
  REQUIRE(m.loss_log.size() == 201);
  for (std::size_t r = 1; r < m.loss_log.size(); ++r) CHECK(m.loss_log[r] <= m.loss_log[r - 1]);
  CHECK(m.loss_log.back() < 0.2 * m.loss_log.front());

  SUBCASE("one round of one deep-enough tree is a newton tree") {
    TabularDataset two;
    two.X = (Eigen::MatrixXd(4, 1) << 0, 1, 2, 3).finished();
    two.y = (Eigen::VectorXd(4) << 0, 0, 4, 4).finished();
    const auto g1 = train_gbt(two, {.rounds = 1, .max_depth = 1, .learning_rate = 1.0, .alpha = 0.0, .lambda = 0.0});
    CHECK(g1.predict_raw(two.X.row(0)) == doctest::Approx(0.0));
    CHECK(g1.predict_raw(two.X.row(3)) == doctest::Approx(4.0));
  }
}

TEST_CASE("feature importance") {
  auto d = make_random(120, 16, 31);
  for (int i = 0; i < 120; ++i) d.y(i) = 2.0 * d.X(i, 0) + 0.01 * d.y(i);
  const Model forest = train_random_forest(d, {.n_trees = 30});
  const Model gbt = train_gbt(d, {.rounds = 50});
  for (const Model* m : {&forest, &gbt}) {
    const auto fi = feature_importance(*m);
    CHECK(fi.per_feature[0] > 0.9);
    CHECK(std::accumulate(fi.per_feature.begin(), fi.per_feature.end(), 0.0) == doctest::Approx(1.0));
    CHECK(fi.ranking[0] == 0);
  }
  const auto a = feature_importance_from(std::vector<double>(16, 2.0));
  const auto b = feature_importance_from(std::vector<double>(16, 7.0));
  CHECK(a.per_feature == b.per_feature);
  CHECK(a.family[0] == doctest::Approx(0.25));
  CHECK_THROWS_AS(feature_importance_from(std::vector<double>(16, 0.0)), Error);
  CHECK_THROWS_AS(feature_importance(Model{train_ols(d)}), Error);
}

TEST_CASE("model persistence round-trips exactly") {
  auto d = make_random(60, 16, 41);
  const fs::path dir = fs::temp_directory_path() / "fcf_model_test";
  fs::create_directories(dir);
  const std::vector<Model> models{train_ols(d), train_random_forest(d, {.n_trees = 5}), train_gbt(d, {.rounds = 10})};
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto path = dir / ("m" + std::to_string(k) + ".json");
    save_model(models[k], path);
    const Model back = load_model(path);
    CHECK(family_of(back) == family_of(models[k]));
    for (int i = 0; i < 60; ++i) {
      const auto row = d.X.row(i);
      const auto f = [&](const Model& m) {
        return std::visit(
            [&](const auto& x) -> double {
              if constexpr (requires { x.predict_raw(row); }) return x.predict_raw(row);
              else return 0.0;
            },
            m);
      };
      CHECK(f(back) == f(models[k]));
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("prediction clamping") {
  CHECK(clamp_prediction(0.5).value == 0.5);
  CHECK_FALSE(clamp_prediction(0.5).clamped);
  CHECK(clamp_prediction(-0.2).value == 0.0);
  CHECK(clamp_prediction(-0.2).raw == -0.2);
  CHECK(clamp_prediction(1.7).value == 1.0);
  CHECK(clamp_prediction(1.7).clamped);
  CHECK(family_from_string("gbt") == Family::Gbt);
  CHECK_THROWS_AS(family_from_string("svm"), Error);
}
