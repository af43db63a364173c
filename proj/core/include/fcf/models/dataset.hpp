#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fcf {
struct TrialSamples;
}

namespace fcf::models {

/// Per-cycle regression samples; rows of X align with y and groups.
struct TabularDataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<std::string> groups;  // trial id per row

  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index cols() const { return X.cols(); }

  /// Throws InvalidArgument when row counts disagree or entries are not finite.
  void validate() const;
  std::size_t distinct_groups() const;
};

enum class FeatureMode { Relative, Raw };

/// Stacks trials into one dataset (relative-change features by default).
TabularDataset make_dataset(std::span<const TrialSamples> trials, FeatureMode mode = FeatureMode::Relative);

}  // namespace fcf::models
