#pragma once

#include <Eigen/Core>

#include "fcf/models/dataset.hpp"

namespace fcf::models {

struct LinearModel {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  bool jittered = false;  // true when the Gram matrix needed diagonal loading

  double predict_raw(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

/// Ordinary least squares on centered data via the normal equations. A
/// near-singular Gram matrix is loaded with 1e-8 times its mean diagonal.
/// Throws Underdetermined with fewer than cols + 1 samples.
LinearModel train_ols(const TabularDataset& data);

}  // namespace fcf::models
