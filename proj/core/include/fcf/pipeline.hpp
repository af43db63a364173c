#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fcf/cycles.hpp"
#include "fcf/dsp.hpp"
#include "fcf/spectral.hpp"
#include "fcf/trial.hpp"

namespace fcf {

struct PipelineConfig {
  dsp::BandpassSpec bandpass{};
  dsp::PhaseMode phase = dsp::PhaseMode::ZeroPhase;
  cycles::SegmentConfig segment{};
  spectral::WelchConfig welch{};
  spectral::StftConfig stft{};
  std::size_t cnn_frames = 197;
  bool spectrograms = true;
};

/// Two stacked channel spectrograms of one cycle (raw STFT magnitudes, frame
/// axis fitted to PipelineConfig::cnn_frames).
using CycleSpectrogram = std::array<Eigen::MatrixXd, 2>;

/// Everything the regressors need from one trial.
struct TrialSamples {
  std::string trial_id;
  std::string subject;
  TaskKind task = TaskKind::Lateral;
  std::array<Muscle, 2> channels{Muscle::LD, Muscle::PD};
  std::vector<cycles::CycleFeatureVector> raw;
  Eigen::MatrixXd relative;  // cycles x 16, percent change vs cycle 1
  std::vector<double> fcf;
  std::optional<std::vector<double>> srf_percent;
  std::vector<CycleSpectrogram> spectrograms;  // empty when disabled

  std::size_t size() const { return fcf.size(); }
};

/// Band-pass, MVC-normalize, segment and featurize a trial.
TrialSamples process_trial(const Trial& trial, const PipelineConfig& cfg = {});

/// Conditioning step on its own: filtered and MVC-normalized channels.
cycles::ConditionedPair condition_emg(const Trial& trial, const PipelineConfig& cfg = {});

namespace io {

/// One row per cycle: subject, trial, task, channels, cycle, 16 raw features,
/// 16 relative-change features, fcf, srf (empty when unlabeled).
void write_features_csv(const std::filesystem::path& path, const std::vector<TrialSamples>& trials);

/// Reads a features CSV back into per-trial sample sets (no spectrograms).
std::vector<TrialSamples> read_features_csv(const std::filesystem::path& path);

/// Binary spectrogram container; see README for the byte layout.
struct SpectrogramHeader {
  double fs = 2000.0;
  spectral::StftConfig stft{};
  std::size_t n_bins = 0;
  std::size_t n_frames = 0;
  std::optional<spectral::NormStats> stats;
};

void write_spectrograms(const std::filesystem::path& path, const std::vector<TrialSamples>& trials,
                        const SpectrogramHeader& header);

/// Returns the header and attaches spectrograms to matching (trial, cycle)
/// entries of `trials`; unknown trials are appended as spectrogram-only sets.
SpectrogramHeader read_spectrograms(const std::filesystem::path& path, std::vector<TrialSamples>& trials);

}  // namespace io
}  // namespace fcf
