#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fcf/models/model.hpp"
#include "fcf/pipeline.hpp"

namespace fcf::eval {

/// 100 * sqrt(mean squared difference). Throws LengthMismatch on unequal or
/// empty inputs.
double rmse(std::span<const double> pred, std::span<const double> truth);

/// 1 - SS_res / SS_tot. Throws ZeroVariance when the truth is constant.
double r_squared(std::span<const double> pred, std::span<const double> truth);

/// Sample standard deviation (n - 1); zero for fewer than two values.
double sample_std(std::span<const double> values);

struct FoldResult {
  std::string trial_id;
  std::string task;
  std::vector<int> cycles;
  std::vector<double> truth;
  std::vector<double> raw;  // unclamped model outputs
  double rmse = 0.0;          // on raw outputs
  double rmse_clamped = 0.0;  // on outputs clamped to [0, 1]
  std::optional<double> r2;   // absent for a constant-label fold
  int clamped = 0;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::string mode;  // "loto" or "cross"
  std::string family;
  std::string subject;
  std::string train_task;
  std::string test_task;
  std::vector<FoldResult> folds;
  double mean_rmse = 0.0;
  double std_rmse = 0.0;
  double mean_rmse_clamped = 0.0;
  std::optional<double> mean_r2;
  int clamp_count = 0;
  bool failed_to_regress = false;  // mean raw RMSE above 100 %
  std::optional<std::array<double, 4>> importance;  // MNF, MDF, TP, RMS shares
  std::vector<double> feature_importance;           // per vector entry, when available
  std::map<std::string, std::string> config;
  std::map<std::string, std::uint64_t> seeds;
  std::vector<std::string> notes;

  /// Recomputes the aggregate fields from `folds`.
  void aggregate();
};

/// Fills the per-fold metrics from truth and raw outputs.
FoldResult make_fold(const TrialSamples& trial, std::vector<double> raw, std::uint64_t seed);

struct FoldModel {
  std::function<std::vector<double>(const TrialSamples&)> predict;
  std::optional<std::vector<double>> importance_totals;
};

/// Trains on the given (sorted-by-id) training trials with the fold seed.
using Trainer = std::function<FoldModel(std::span<const TrialSamples> train, std::uint64_t fold_seed)>;

struct EvalConfig {
  models::TrainConfig train{};
  std::uint64_t seed = 7;
  /// Called with the held-out trial id and each fold's trained model.
  std::function<void(const std::string&, const models::Model&)> inspect;
};

/// Seed of the fold that holds out `trial_id`; independent of trial order.
std::uint64_t fold_seed(std::uint64_t seed, const std::string& trial_id);

/// Forest and CNN seeds used when training with `seed`.
models::TrainConfig seeded(models::TrainConfig cfg, std::uint64_t seed);

/// Leave-one-trial-out: one fold per trial, each trained on all the others.
/// Throws TooFewTrials below two trials.
EvalReport loto_cv(std::span<const TrialSamples> trials, const EvalConfig& cfg);
EvalReport loto_cv(std::span<const TrialSamples> trials, const Trainer& trainer, const std::string& family,
                   std::uint64_t seed);

/// Applies a trained model, unchanged, to every trial of another task; one
/// fold per test trial. Throws ChannelMismatch when the channel count or
/// feature width differs from the training trials.
EvalReport cross_task_eval(const models::Model& model, std::span<const TrialSamples> train,
                           std::span<const TrialSamples> test, const EvalConfig& cfg);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::size_t n = 0;
};

struct SrfCorrelation {
  LinearFit pooled;
  std::vector<std::pair<std::string, LinearFit>> per_trial;
};

/// Least-squares fit of SRF (percent) on FCF (percent), pooled and per trial.
/// Throws MissingSrf for unlabeled trials and ZeroVariance for constant SRF.
SrfCorrelation srf_fcf_correlation(std::span<const TrialSamples> trials);

/// Echo of the training configuration as strings.
std::map<std::string, std::string> config_echo(const models::TrainConfig& cfg);

}  // namespace fcf::eval
