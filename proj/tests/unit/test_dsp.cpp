#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "fcf/dsp.hpp"
#include "fcf/error.hpp"

using namespace fcf;
using namespace fcf::dsp;

namespace {

RawTrace tone(double f, double seconds, double fs = 2000.0, double amp = 1.0) {
  RawTrace t;
  t.fs = fs;
  const auto n = static_cast<std::size_t>(seconds * fs);
  for (std::size_t i = 0; i < n; ++i) t.samples.push_back(amp * std::sin(2.0 * std::numbers::pi * f * i / fs));
  return t;
}

double rms_of(const std::vector<double>& v) { return rms(v); }

// Independent evaluation of H(e^jw) straight from the biquad coefficients.
double response_db(const FilterCoefficients& c, double f) {
  const std::complex<double> z1 = std::polar(1.0, -2.0 * std::numbers::pi * f / c.spec.fs);
  std::complex<double> h = 1.0;
  for (const auto& s : c.sections) h *= (s.b0 + s.b1 * z1 + s.b2 * z1 * z1) / (1.0 + s.a1 * z1 + s.a2 * z1 * z1);
  return 20.0 * std::log10(std::abs(h));
}

}  // namespace

TEST_CASE("band-pass design matches the Butterworth magnitude") {
  const auto c = design_bandpass({5.0, 495.0, 4, 2000.0});
  CHECK(std::abs(response_db(c, 50.0)) < 1.0);
  CHECK(std::abs(response_db(c, std::sqrt(5.0 * 495.0))) < 0.1);
  CHECK(response_db(c, 100.0) > -1.0);
  CHECK(response_db(c, 1.0) < -20.0);
  // Each edge of a prewarped 2-pole Butterworth sits at -3 dB.
  CHECK(response_db(c, 5.0) == doctest::Approx(-3.0103).epsilon(0.02));
  CHECK(magnitude_response(c, 50.0) == doctest::Approx(std::pow(10.0, response_db(c, 50.0) / 20.0)).epsilon(1e-12));

  double dc_num = 0.0;
  for (const auto& s : c.sections) {
    if (s.is_highpass) dc_num += s.b0 + s.b1 + s.b2;
  }
  CHECK(dc_num == 0.0);
  CHECK(magnitude_response(c, 0.0) == 0.0);
}

TEST_CASE("band-pass poles lie inside the unit circle") {
  for (int order : {2, 4, 6, 8}) {
    const auto c = design_bandpass({20.0, 450.0, order, 2000.0});
    for (const auto& s : c.sections) {
      const std::complex<double> disc = std::sqrt(std::complex<double>(s.a1 * s.a1 - 4.0 * s.a2));
      CHECK(std::abs((-s.a1 + disc) / 2.0) < 1.0);
      CHECK(std::abs((-s.a1 - disc) / 2.0) < 1.0);
    }
  }
}

TEST_CASE("band-pass rejects invalid specs") {
  CHECK_THROWS_AS(design_bandpass({5.0, 1000.0, 4, 2000.0}), Error);
  CHECK_THROWS_AS(design_bandpass({0.0, 400.0, 4, 2000.0}), Error);
  CHECK_THROWS_AS(design_bandpass({300.0, 200.0, 4, 2000.0}), Error);
  CHECK_THROWS_AS(design_bandpass({5.0, 400.0, 3, 2000.0}), Error);
  try {
    design_bandpass({5.0, 1000.0, 4, 2000.0});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidSpec);
  }
  // Just below Nyquist is legal and clamped for conditioning.
  const auto c = design_bandpass({5.0, 999.0, 4, 2000.0});
  CHECK(c.spec.high_cut == doctest::Approx(0.495 * 2000.0));
}

TEST_CASE("zero-phase filtering: pass band, stop band, linearity") {
  const auto c = design_bandpass({});
  const auto in100 = tone(100.0, 10.0);
  const auto out100 = filter_zero_phase(in100, c);
  REQUIRE(out100.samples.size() == in100.samples.size());
  CHECK(out100.stage == Stage::Filtered);
  CHECK(rms_of(out100.samples) == doctest::Approx(rms_of(in100.samples)).epsilon(0.05));

  const auto in1 = tone(1.0, 10.0);
  const auto out1 = filter_zero_phase(in1, c);
  CHECK(20.0 * std::log10(rms_of(out1.samples) / rms_of(in1.samples)) <= -20.0);

  RawTrace zero;
  zero.fs = 2000.0;
  zero.samples.assign(5000, 0.0);
  for (double v : filter_zero_phase(zero, c).samples) CHECK(v == 0.0);
}

TEST_CASE("zero-phase impulse response is symmetric") {
  const auto c = design_bandpass({});
  RawTrace imp;
  imp.fs = 2000.0;
  imp.samples.assign(4001, 0.0);
  imp.samples[2000] = 1.0;
  const auto out = filter_zero_phase(imp, c).samples;
  double peak = 0.0, worst = 0.0;
  for (double v : out) peak = std::max(peak, std::abs(v));
  for (int k = 1; k < 2000; ++k) worst = std::max(worst, std::abs(out[2000 + k] - out[2000 - k]));
  CHECK(worst / peak <= 1e-9);
}

TEST_CASE("filtering errors and causal mode") {
  const auto c = design_bandpass({});
  RawTrace tiny;
  tiny.fs = 2000.0;
  tiny.samples.assign(12, 1.0);
  CHECK_THROWS_AS(filter_zero_phase(tiny, c), Error);

  const auto in = tone(100.0, 2.0);
  const auto causal = filter_zero_phase(in, c, PhaseMode::Causal);
  const auto direct = sosfilt(c, in.samples);
  REQUIRE(causal.samples.size() == direct.size());
  for (std::size_t i = 0; i < direct.size(); ++i) CHECK(causal.samples[i] == direct[i]);
}

TEST_CASE("MVC normalization") {
  ConditionedTrace t;
  t.fs = 2000.0;
  t.samples = {0.2, -0.4};
  const auto n = normalize_mvc(t, 0.4);
  CHECK(n.samples[0] == doctest::Approx(0.5));
  CHECK(n.samples[1] == doctest::Approx(-1.0));
  CHECK(n.stage == Stage::Normalized);
  CHECK(n.mvc == 0.4);
  CHECK_THROWS_AS(normalize_mvc(t, 0.0), Error);
  CHECK_THROWS_AS(normalize_mvc(t, -1.0), Error);

  t.samples = {0.0, 0.0, 0.0};
  for (double v : normalize_mvc(t, 1.0).samples) CHECK(v == 0.0);

  t.samples = {0.3, -0.7, 1.1};
  const auto twice = normalize_mvc(normalize_mvc(t, 0.5), 0.8);
  const auto once = normalize_mvc(t, 0.5 * 0.8);
  for (std::size_t i = 0; i < 3; ++i) CHECK(twice.samples[i] == doctest::Approx(once.samples[i]).epsilon(1e-15));
}

TEST_CASE("rectification") {
  ConditionedTrace t;
  t.fs = 2000.0;
  t.samples = {-1.0, 0.5, 0.0};
  CHECK_THROWS_AS(rectify(t), Error);
  const auto r = rectify(normalize_mvc(t, 1.0));
  CHECK(r.samples == std::vector<double>{1.0, 0.5, 0.0});
  CHECK(r.stage == Stage::Rectified);
  CHECK(rectify(r).samples == r.samples);

  ConditionedTrace s;
  s.fs = 2000.0;
  const double amp = 0.7;
  for (int i = 0; i < 200000; ++i) s.samples.push_back(amp * std::sin(2.0 * std::numbers::pi * 50.0 * i / 2000.0));
  const auto rs = rectify(normalize_mvc(s, 1.0));
  double mean = 0.0;
  for (double v : rs.samples) mean += v;
  mean /= static_cast<double>(rs.samples.size());
  CHECK(mean == doctest::Approx(2.0 * amp / std::numbers::pi).epsilon(1e-3));
}

TEST_CASE("rms") {
  CHECK(rms(std::vector<double>{3.0, 4.0}) == doctest::Approx(std::sqrt(12.5)));
  CHECK(rms(std::vector<double>{-2.5, -2.5, -2.5}) == doctest::Approx(2.5));
  CHECK_THROWS_AS(rms(std::vector<double>{}), Error);
  const auto s = tone(10.0, 1.0);  // whole periods
  CHECK(std::abs(rms(s.samples) - 1.0 / std::sqrt(2.0)) < 1e-6);
  std::vector<double> k = s.samples;
  for (double& v : k) v *= -3.0;
  CHECK(rms(k) == doctest::Approx(3.0 * rms(s.samples)).epsilon(1e-12));
}

TEST_CASE("MVC value is the peak windowed RMS") {
  std::vector<double> x(4000, 0.0);
  for (int i = 1000; i < 1500; ++i) x[i] = (i % 2 == 0) ? 2.0 : -2.0;
  CHECK(mvc_value(x, 2000.0, 0.25) == doctest::Approx(2.0));
}
