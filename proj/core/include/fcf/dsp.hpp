#pragma once

#include <span>
#include <string>
#include <vector>

namespace fcf {

/// Muscle the EMG electrode sits on: lateral, posterior or anterior deltoid.
enum class Muscle { LD, PD, AD };

std::string to_string(Muscle m);
Muscle muscle_from_string(const std::string& s);

/// Raw single-channel EMG recording in millivolts.
struct RawTrace {
  std::vector<double> samples;
  double fs = 0.0;
  Muscle channel = Muscle::LD;

  /// Throws InvalidArgument unless fs > 0, samples non-empty and finite.
  void validate() const;
};

namespace dsp {

struct BandpassSpec {
  double low_cut = 5.0;
  double high_cut = 500.0;
  int order = 4;  // total poles, split evenly between the two band edges
  double fs = 2000.0;
};

/// One direct-form-II-transposed biquad. a0 is normalized to 1. First-order
/// sections store b2 = a2 = 0.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;

  bool is_highpass = false;
};

struct FilterCoefficients {
  std::vector<Biquad> sections;
  BandpassSpec spec;  // effective spec after clamping
};

/// Butterworth band-pass built as a high-pass cascade at low_cut followed by
/// a low-pass cascade at high_cut, each of order spec.order / 2, using the
/// bilinear transform with prewarped corners. high_cut is clamped to
/// 0.495 * fs. Throws InvalidSpec when 0 < low < high < fs/2 is violated or
/// the order is not a positive even number.
FilterCoefficients design_bandpass(const BandpassSpec& spec);

/// Complex magnitude of the cascade's frequency response at `freq_hz`.
double magnitude_response(const FilterCoefficients& coeffs, double freq_hz);

enum class Stage { Filtered, Normalized, Rectified };

struct ConditionedTrace {
  std::vector<double> samples;
  double fs = 0.0;
  Muscle channel = Muscle::LD;
  Stage stage = Stage::Filtered;
  double mvc = 0.0;  // set once normalized
};

enum class PhaseMode { ZeroPhase, Causal };

/// Applies the cascade. ZeroPhase runs forward then backward over an
/// odd-reflected extension of 3 * order samples on each side, with
/// steady-state initial conditions. Throws TooShort when the trace is not
/// longer than the padding.
ConditionedTrace filter_zero_phase(const RawTrace& trace, const FilterCoefficients& coeffs,
                                   PhaseMode mode = PhaseMode::ZeroPhase);

/// Single causal pass with zero initial state.
std::vector<double> sosfilt(const FilterCoefficients& coeffs, std::span<const double> x);

ConditionedTrace normalize_mvc(const ConditionedTrace& trace, double mvc_value);

/// Requires stage == Normalized; throws WrongStage otherwise.
ConditionedTrace rectify(const ConditionedTrace& trace);

/// Root mean square; throws EmptySegment for an empty input.
double rms(std::span<const double> segment);

/// Maximum of the moving-window RMS over `window_s` seconds, used as the MVC
/// reference of a filtered MVC recording.
double mvc_value(std::span<const double> filtered, double fs, double window_s = 0.25);

}  // namespace dsp
}  // namespace fcf
