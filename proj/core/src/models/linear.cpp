#include "fcf/models/linear.hpp"

#include <cmath>

#include <Eigen/Cholesky>

#include "fcf/error.hpp"

namespace fcf::models {

double LinearModel::predict_raw(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  if (x.size() != weights.size()) throw Error(ErrorCode::ShapeMismatch, "feature count differs from model");
  return intercept + x.dot(weights);
}

LinearModel train_ols(const TabularDataset& data) {
  data.validate();
  const Eigen::Index n = data.rows(), p = data.cols();
  if (n < p + 1) {
    throw Error(ErrorCode::Underdetermined, std::to_string(n) + " samples cannot fit " + std::to_string(p + 1) +
                                                " coefficients");
  }
  const Eigen::RowVectorXd x_mean = data.X.colwise().mean();
  const double y_mean = data.y.mean();
  const Eigen::MatrixXd xc = data.X.rowwise() - x_mean;
  const Eigen::VectorXd yc = data.y.array() - y_mean;

  Eigen::MatrixXd gram = xc.transpose() * xc;
  const Eigen::VectorXd rhs = xc.transpose() * yc;

  LinearModel model;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
  const double d_max = d.size() ? d.maxCoeff() : 0.0;
  const bool singular = ldlt.info() != Eigen::Success || d_max <= 0.0 || d.minCoeff() <= 1e-12 * d_max;
  if (singular) {
    const double mean_diag = gram.diagonal().mean();
    gram.diagonal().array() += 1e-8 * (mean_diag > 0.0 ? mean_diag : 1.0);
    ldlt.compute(gram);
    model.jittered = true;
  }
  model.weights = ldlt.solve(rhs);
  model.intercept = y_mean - x_mean.dot(model.weights);
  if (!model.weights.allFinite() || !std::isfinite(model.intercept)) {
    throw Error(ErrorCode::Underdetermined, "least-squares solution is not finite");
  }
  return model;
}

}  // namespace fcf::models
