#pragma once

#include <complex>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fcf/dsp.hpp"

namespace fcf::spectral {

/// In-place complex FFT. Power-of-two lengths use iterative radix-2; other
/// lengths fall back to a direct DFT.
void fft(std::vector<std::complex<double>>& data);

/// Periodic Hann window of length n.
std::vector<double> hann(std::size_t n);

/// One-sided power spectral density, signal-units^2 per Hz.
struct Psd {
  std::vector<double> freqs;
  std::vector<double> power;
  double df = 0.0;
};

struct WelchConfig {
  std::size_t seg_len = 1024;
  double overlap = 0.5;
};

/// Hann-windowed, overlap-averaged periodogram with density scaling, so that
/// sum(power) * df equals the window-weighted mean square of the input.
Psd psd_welch(std::span<const double> segment, double fs, const WelchConfig& cfg = {});

/// Power-weighted mean frequency. Throws ZeroPower when the PSD is empty of
/// energy.
double mnf(const Psd& psd);

/// Frequency where the cumulative power reaches half the total, linearly
/// interpolated inside the crossing bin.
double mdf(const Psd& psd);

/// Riemann sum of the PSD.
double total_power(const Psd& psd);

struct StftConfig {
  std::size_t window = 400;
  std::size_t overlap = 300;
  double band_low = 10.0;
  double band_high = 250.0;
};

/// STFT magnitude restricted to a frequency band. Rows are frequency bins,
/// columns are frames.
struct MagnitudeSpectrogram {
  Eigen::MatrixXd values;
  std::vector<double> freqs;
  std::vector<double> times;
  double fs = 0.0;
};

/// Index range [first, last] of FFT bins of an n-point window inside the band.
std::pair<std::size_t, std::size_t> band_bins(const StftConfig& cfg, double fs);

/// Frame count floor((L - window) / hop) + 1.
std::size_t stft_frame_count(std::size_t length, const StftConfig& cfg);

MagnitudeSpectrogram stft_spectrogram(std::span<const double> samples, double fs,
                                      const StftConfig& cfg = {});

/// z-score statistics of log magnitudes. Global scope stores one mean/std;
/// per-bin scope stores one pair per frequency row.
struct NormStats {
  bool per_bin = false;
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline constexpr double kLogEpsilon = 1e-8;

/// Computes statistics of log(magnitude + eps) over every entry of every
/// matrix. Throws DegenerateStats when a standard deviation is below 1e-12.
NormStats fit_norm_stats(std::span<const Eigen::MatrixXd> raw, bool per_bin = false);

/// (log(magnitude + eps) - mean) / std.
Eigen::MatrixXd log_zscore(const Eigen::MatrixXd& raw, const NormStats& stats);

/// Center-crops or edge-pads the frame axis to exactly `frames` columns.
Eigen::MatrixXd fit_frames(const Eigen::MatrixXd& m, std::size_t frames);

}  // namespace fcf::spectral
