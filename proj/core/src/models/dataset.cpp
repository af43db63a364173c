#include "fcf/models/dataset.hpp"

#include <cmath>
#include <set>

#include "fcf/error.hpp"
#include "fcf/pipeline.hpp"

namespace fcf::models {

void TabularDataset::validate() const {
  if (X.rows() != y.size() || (!groups.empty() && static_cast<std::size_t>(X.rows()) != groups.size())) {
    throw Error(ErrorCode::InvalidArgument, "dataset row counts disagree");
  }
  if (!X.allFinite() || !y.allFinite()) throw Error(ErrorCode::InvalidArgument, "dataset has non-finite entries");
}

std::size_t TabularDataset::distinct_groups() const {
  return std::set<std::string>(groups.begin(), groups.end()).size();
}

TabularDataset make_dataset(std::span<const TrialSamples> trials, FeatureMode mode) {
  Eigen::Index n = 0;
  for (const auto& t : trials) n += static_cast<Eigen::Index>(t.size());
  TabularDataset d;
  d.X.resize(n, cycles::kVectorSize);
  d.y.resize(n);
  Eigen::Index r = 0;
  for (const auto& t : trials) {
    for (std::size_t k = 0; k < t.size(); ++k, ++r) {
      for (int j = 0; j < cycles::kVectorSize; ++j) {
        d.X(r, j) = mode == FeatureMode::Relative ? t.relative(static_cast<Eigen::Index>(k), j) : t.raw[k].values[j];
      }
      d.y(r) = t.fcf[k];
      d.groups.push_back(t.trial_id);
    }
  }
  d.validate();
  return d;
}

}  // namespace fcf::models
