#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fcf/dsp.hpp"
#include "fcf/spectral.hpp"
#include "fcf/trial.hpp"

namespace fcf::cycles {

/// Half-open window [start, end) in 500 Hz position samples. The EMG range is
/// the same interval scaled by the rate ratio.
struct CycleWindow {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t emg_start = 0;
  std::size_t emg_end = 0;
};

struct SegmentConfig {
  double hysteresis = 0.10;  // fraction of the movement amplitude
};

/// Splits a trial into full movement cycles. Lateral and vertical trials cut
/// at upward midline crossings of the task axis (x or z); circular trials cut
/// every 2*pi of unwrapped angle about the path center. Trailing partial
/// cycles are dropped. Throws NoCycles when no full cycle is found.
std::vector<CycleWindow> segment_cycles(const Trial& trial, const SegmentConfig& cfg = {});

enum class Feature { MNF = 0, MDF = 1, TP = 2, RMS = 3 };
inline constexpr int kFeatureCount = 4;
inline constexpr int kChannelCount = 2;
inline constexpr int kIntervalCount = 3;
inline constexpr int kVectorSize = kChannelCount * kFeatureCount * 2;  // 16

std::string to_string(Feature f);

/// Per-interval features: values[interval][channel][feature]. An entry is
/// empty when that interval had no spectral power.
struct IntervalTable {
  std::array<std::array<std::array<std::optional<double>, kFeatureCount>, kChannelCount>, kIntervalCount> values{};
};

/// MVC-normalized channels (filtered, not rectified) covering a whole trial.
struct ConditionedPair {
  std::array<dsp::ConditionedTrace, 2> normalized;
};

/// Splits the cycle into three equal intervals and computes MNF, MDF and TP
/// from the normalized signal and RMS from its rectified form. Throws
/// TooShort when the window holds fewer than 3 Welch segments; throws
/// ZeroPower when an interval carries no energy (unless `allow_missing`, in
/// which case those spectral entries stay empty).
IntervalTable interval_features(const CycleWindow& window, const ConditionedPair& emg,
                                const spectral::WelchConfig& welch = {}, bool allow_missing = false);

struct CycleFeatureVector {
  std::array<double, kVectorSize> values{};
  int cycle = 0;  // 1-based
  std::string trial_id;

  /// Index of the (channel, feature, max?) entry.
  static constexpr int index(int channel, Feature f, bool is_max) {
    return channel * kFeatureCount * 2 + static_cast<int>(f) * 2 + (is_max ? 1 : 0);
  }
};

/// Column names such as "ch1_mnf_min", in vector order.
std::vector<std::string> feature_names();

/// Family (MNF/MDF/TP/RMS) of vector entry j.
Feature feature_family(int j);

/// Min and max of each (channel, feature) across the three intervals.
/// Throws IncompleteIntervals when any interval value is missing.
CycleFeatureVector cycle_feature_vector(const IntervalTable& intervals, int cycle = 0,
                                        const std::string& trial_id = {});

/// entry(k, j) = 100 * (f_kj - f_1j) / f_1j. Throws DegenerateBaseline when a
/// first-cycle magnitude is at most 1e-12.
Eigen::MatrixXd relative_change(const std::vector<CycleFeatureVector>& samples);

/// [1/N, 2/N, ..., 1].
std::vector<double> fcf_labels(int n_cycles);

/// Borg scores to percent, with plateaus linearly interpolated between the
/// onsets of distinct scores. Throws OutOfRange for scores outside [0, 10], a
/// final score other than 10, or a length different from n_cycles.
std::vector<double> srf_normalize(const std::vector<int>& borg, int n_cycles);

}  // namespace fcf::cycles
