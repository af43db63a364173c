#include "fcf/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "fcf/error.hpp"

namespace fcf {

std::string to_string(Muscle m) {
  switch (m) {
    case Muscle::LD: return "LD";
    case Muscle::PD: return "PD";
    case Muscle::AD: return "AD";
  }
  return "?";
}

Muscle muscle_from_string(const std::string& s) {
  if (s == "LD") return Muscle::LD;
  if (s == "PD") return Muscle::PD;
  if (s == "AD") return Muscle::AD;
  throw Error(ErrorCode::InvalidArgument, "unknown muscle label '" + s + "'");
}

void RawTrace::validate() const {
  if (!(fs > 0.0)) throw Error(ErrorCode::InvalidArgument, "sampling rate must be positive");
  if (samples.empty()) throw Error(ErrorCode::InvalidArgument, "empty trace");
  for (double v : samples) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite sample in trace");
  }
}

namespace dsp {
namespace {

// Butterworth section quality factors for an n-th order prototype; a trailing
// first-order section is implied when n is odd.
std::vector<double> butterworth_q(int n) {
  std::vector<double> q;
  for (int k = 0; k < n / 2; ++k) {
    q.push_back(1.0 / (2.0 * std::sin(std::numbers::pi * (2.0 * k + 1.0) / (2.0 * n))));
  }
  return q;
}

void append_edge(std::vector<Biquad>& out, int n, double fc, double fs, bool highpass) {
  const double k = std::tan(std::numbers::pi * fc / fs);  // prewarped corner
  for (double q : butterworth_q(n)) {
    const double norm = 1.0 / (1.0 + k / q + k * k);
    Biquad s;
    if (highpass) {
      s.b0 = norm;
      s.b1 = -2.0 * norm;
      s.b2 = norm;
    } else {
      s.b0 = k * k * norm;
      s.b1 = 2.0 * s.b0;
      s.b2 = s.b0;
    }
    s.a1 = 2.0 * (k * k - 1.0) * norm;
    s.a2 = (1.0 - k / q + k * k) * norm;
    s.is_highpass = highpass;
    out.push_back(s);
  }
  if (n % 2 == 1) {
    const double norm = 1.0 / (1.0 + k);
    Biquad s;
    if (highpass) {
      s.b0 = norm;
      s.b1 = -norm;
    } else {
      s.b0 = k * norm;
      s.b1 = s.b0;
    }
    s.a1 = (k - 1.0) * norm;
    s.is_highpass = highpass;
    out.push_back(s);
  }
}

double run_sections(const std::vector<Biquad>& sections, std::vector<double>& state, double x) {
  for (std::size_t i = 0; i < sections.size(); ++i) {
    const Biquad& s = sections[i];
    double& z1 = state[2 * i];
    double& z2 = state[2 * i + 1];
    const double y = s.b0 * x + z1;
    z1 = s.b1 * x - s.a1 * y + z2;
    z2 = s.b2 * x - s.a2 * y;
    x = y;
  }
  return x;
}

// Steady-state delay-line contents for a constant unit input.
std::vector<double> steady_state(const std::vector<Biquad>& sections) {
  std::vector<double> zi(2 * sections.size());
  double u = 1.0;
  for (std::size_t i = 0; i < sections.size(); ++i) {
    const Biquad& s = sections[i];
    const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    const double z2 = (s.b2 - s.a2 * g) * u;
    const double z1 = (s.b1 - s.a1 * g) * u + z2;
    zi[2 * i] = z1;
    zi[2 * i + 1] = z2;
    u *= g;
  }
  return zi;
}

void filter_in_place(const std::vector<Biquad>& sections, std::vector<double>& x, bool with_initial) {
  std::vector<double> state(2 * sections.size(), 0.0);
  if (with_initial && !x.empty()) {
    state = steady_state(sections);
    for (double& z : state) z *= x.front();
  }
  for (double& v : x) v = run_sections(sections, state, v);
}

}  // namespace

FilterCoefficients design_bandpass(const BandpassSpec& spec) {
  if (!(spec.fs > 0.0)) throw Error(ErrorCode::InvalidSpec, "fs must be positive");
  if (spec.order <= 0 || spec.order % 2 != 0) {
    throw Error(ErrorCode::InvalidSpec, "band-pass order must be a positive even number");
  }
  const double nyquist = 0.5 * spec.fs;
  if (!(spec.low_cut > 0.0) || !(spec.low_cut < spec.high_cut) || !(spec.high_cut < nyquist)) {
    throw Error(ErrorCode::InvalidSpec, "cutoffs must satisfy 0 < low < high < fs/2");
  }
  FilterCoefficients out;
  out.spec = spec;
  out.spec.high_cut = std::min(spec.high_cut, 0.495 * spec.fs);
  if (!(out.spec.low_cut < out.spec.high_cut)) {
    throw Error(ErrorCode::InvalidSpec, "low cut exceeds the clamped high cut");
  }
  const int per_edge = spec.order / 2;
  append_edge(out.sections, per_edge, out.spec.low_cut, spec.fs, true);
  append_edge(out.sections, per_edge, out.spec.high_cut, spec.fs, false);
  return out;
}

double magnitude_response(const FilterCoefficients& coeffs, double freq_hz) {
  const double w = 2.0 * std::numbers::pi * freq_hz / coeffs.spec.fs;
  const std::complex<double> z1 = std::polar(1.0, -w);
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h = 1.0;
  for (const Biquad& s : coeffs.sections) {
    h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  }
  return std::abs(h);
}

std::vector<double> sosfilt(const FilterCoefficients& coeffs, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  filter_in_place(coeffs.sections, y, false);
  return y;
}

ConditionedTrace filter_zero_phase(const RawTrace& trace, const FilterCoefficients& coeffs,
                                   PhaseMode mode) {
  trace.validate();
  ConditionedTrace out;
  out.fs = trace.fs;
  out.channel = trace.channel;
  out.stage = Stage::Filtered;

  if (mode == PhaseMode::Causal) {
    out.samples = sosfilt(coeffs, trace.samples);
    return out;
  }

  const std::size_t pad = 3 * static_cast<std::size_t>(coeffs.spec.order);
  const auto& x = trace.samples;
  const std::size_t n = x.size();
  if (n <= pad) {
    throw Error(ErrorCode::TooShort, "trace of " + std::to_string(n) +
                                         " samples is too short for zero-phase filtering");
  }

  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x.back() - x[n - 1 - i]);

  filter_in_place(coeffs.sections, ext, true);
  std::reverse(ext.begin(), ext.end());
  filter_in_place(coeffs.sections, ext, true);
  std::reverse(ext.begin(), ext.end());

  out.samples.assign(ext.begin() + static_cast<std::ptrdiff_t>(pad),
                     ext.begin() + static_cast<std::ptrdiff_t>(pad + n));
  return out;
}

ConditionedTrace normalize_mvc(const ConditionedTrace& trace, double mvc_value) {
  if (!(mvc_value > 0.0)) throw Error(ErrorCode::NonPositiveMvc, "MVC value must be positive");
  ConditionedTrace out = trace;
  for (double& v : out.samples) v /= mvc_value;
  out.stage = Stage::Normalized;
  out.mvc = trace.stage == Stage::Normalized ? trace.mvc * mvc_value : mvc_value;
  return out;
}

ConditionedTrace rectify(const ConditionedTrace& trace) {
  if (trace.stage == Stage::Rectified) return trace;
  if (trace.stage != Stage::Normalized) {
    throw Error(ErrorCode::WrongStage, "rectify expects an MVC-normalized trace");
  }
  ConditionedTrace out = trace;
  for (double& v : out.samples) v = std::abs(v);
  out.stage = Stage::Rectified;
  return out;
}

double rms(std::span<const double> segment) {
  if (segment.empty()) throw Error(ErrorCode::EmptySegment, "rms of an empty segment");
  double acc = 0.0;
  for (double v : segment) acc += v * v;
  return std::sqrt(acc / static_cast<double>(segment.size()));
}

double mvc_value(std::span<const double> filtered, double fs, double window_s) {
  const auto w = static_cast<std::size_t>(std::lround(window_s * fs));
  if (w == 0 || filtered.size() < w) {
    throw Error(ErrorCode::TooShort, "MVC recording shorter than the RMS window");
  }
  // Running sum of squares; recomputed exactly every window to bound drift.
  double best = 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < w; ++i) acc += filtered[i] * filtered[i];
  best = acc;
  for (std::size_t i = w; i < filtered.size(); ++i) {
    if ((i - w) % w == 0 && i != w) {
      acc = 0.0;
      for (std::size_t j = i - w; j < i; ++j) acc += filtered[j] * filtered[j];
    }
    acc += filtered[i] * filtered[i] - filtered[i - w] * filtered[i - w];
    best = std::max(best, acc);
  }
  return std::sqrt(std::max(best, 0.0) / static_cast<double>(w));
}

}  // namespace dsp
}  // namespace fcf
