#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fcf/models/cnn.hpp"
#include "fcf/models/dataset.hpp"
#include "fcf/models/forest.hpp"
#include "fcf/models/gbt.hpp"
#include "fcf/models/linear.hpp"
#include "fcf/spectral.hpp"

namespace fcf {
struct TrialSamples;
}

namespace fcf::models {

enum class Family { Linear, Forest, Gbt, Cnn };

std::string to_string(Family f);
/// Throws InvalidArgument for anything but linear/forest/gbt/cnn.
Family family_from_string(const std::string& s);

struct Prediction {
  double raw = 0.0;
  double value = 0.0;  // raw clamped to [0, 1]
  bool clamped = false;
};

Prediction clamp_prediction(double raw);

/// CNN plus the spectrogram normalization it was trained with.
struct CnnBundle {
  CnnModel model;
  spectral::NormStats stats;
  std::size_t frames = 197;
};

using Model = std::variant<LinearModel, ForestModel, GbtModel, CnnBundle>;

Family family_of(const Model& m);

struct TrainConfig {
  Family family = Family::Forest;
  FeatureMode features = FeatureMode::Relative;
  ForestConfig forest{};
  GbtConfig gbt{};
  CnnConfig cnn{};
  bool per_bin_norm = false;
};

/// Trains one model of `cfg.family` on the given trials. CNN normalization
/// statistics come from these trials only.
Model train_model(std::span<const TrialSamples> trials, const TrainConfig& cfg);

/// Raw per-cycle outputs for one trial. Throws ShapeMismatch when the trial's
/// feature width or spectrogram dims differ from the model's.
std::vector<double> predict_trial(const Model& m, const TrialSamples& trial,
                                  FeatureMode features = FeatureMode::Relative);

/// Log z-scored, frame-fitted CNN inputs of a trial.
std::vector<CnnInput> cnn_inputs(const TrialSamples& trial, const spectral::NormStats& stats, std::size_t frames);

struct FeatureImportance {
  std::vector<double> per_feature;  // shares over the 16 vector entries
  std::array<double, 4> family{};   // MNF, MDF, TP, RMS
  std::array<int, 4> ranking{};     // family indices, most important first
};

/// Normalized impurity decrease (forest) or gain (gbt). Throws Untrained for
/// empty models and InvalidArgument for families without split statistics.
FeatureImportance feature_importance(const Model& m);
FeatureImportance feature_importance_from(std::span<const double> totals);

/// Linear, forest and gbt models as versioned JSON; the CNN as a binary weight
/// file plus "<path>.norm.json" holding its normalization.
void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace fcf::models
