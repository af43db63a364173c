#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fcf/error.hpp"
#include "fcf/spectral.hpp"

using namespace fcf;
using namespace fcf::spectral;

namespace {

std::vector<double> sine(double f, std::size_t n, double fs = 2000.0, double amp = 1.0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = amp * std::sin(2.0 * std::numbers::pi * f * i / fs);
  return v;
}

std::vector<double> white(std::size_t n, std::uint64_t seed, double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, sigma);
  std::vector<double> v(n);
  for (double& x : v) x = N(rng);
  return v;
}

}  // namespace

TEST_CASE("fft agrees with a direct DFT") {
  for (std::size_t n : {8u, 64u, 12u}) {
    std::vector<std::complex<double>> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = {std::cos(0.3 * i), std::sin(1.7 * i)};
    auto X = x;
    fft(X);
    for (std::size_t k = 0; k < n; ++k) {
      std::complex<double> ref = 0.0;
      for (std::size_t i = 0; i < n; ++i) ref += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * k * i / n);
      CHECK(std::abs(X[k] - ref) < 1e-9);
    }
  }
}

TEST_CASE("periodic Hann window") {
  const auto w = hann(8);
  CHECK(w[0] == 0.0);
  CHECK(w[4] == doctest::Approx(1.0));
  CHECK(w[2] == doctest::Approx(0.5));
  CHECK(w[6] == doctest::Approx(0.5));
}

TEST_CASE("Welch PSD of a sine") {
  const auto x = sine(100.0, 8000);
  const auto p = psd_welch(x, 2000.0);
  CHECK(total_power(p) == doctest::Approx(0.5).epsilon(0.02));
  CHECK(std::abs(mnf(p) - 100.0) <= p.df);
  CHECK(std::abs(mdf(p) - 100.0) <= p.df);
  std::size_t peak = 0;
  for (std::size_t i = 0; i < p.power.size(); ++i) {
    if (p.power[i] > p.power[peak]) peak = i;
  }
  CHECK(std::abs(p.freqs[peak] - 100.0) <= p.df);
}

TEST_CASE("Welch PSD of white noise") {
  const auto x = white(120000, 11, 1.5);
  const auto p = psd_welch(x, 2000.0);
  CHECK(total_power(p) == doctest::Approx(2.25).epsilon(0.05));
  CHECK(mnf(p) == doctest::Approx(500.0).epsilon(0.02));
  CHECK(mdf(p) == doctest::Approx(500.0).epsilon(0.02));
}

TEST_CASE("Parseval: sum P df equals the window-weighted mean square") {
  const auto x = white(16384, 5);
  WelchConfig cfg;
  const auto p = psd_welch(x, 2000.0, cfg);
  const auto w = hann(cfg.seg_len);
  double w2 = 0.0;
  for (double v : w) w2 += v * v;
  const std::size_t hop = cfg.seg_len / 2;
  double acc = 0.0;
  std::size_t segs = 0;
  for (std::size_t s = 0; s + cfg.seg_len <= x.size(); s += hop, ++segs) {
    for (std::size_t i = 0; i < cfg.seg_len; ++i) acc += w[i] * w[i] * x[s + i] * x[s + i];
  }
  CHECK(total_power(p) == doctest::Approx(acc / (w2 * segs)).epsilon(0.01));
}

TEST_CASE("PSD edge cases and invariants") {
  const auto z = psd_welch(std::vector<double>(4096, 0.0), 2000.0);
  for (double v : z.power) CHECK(v == 0.0);
  CHECK(total_power(z) == 0.0);
  CHECK_THROWS_AS(mnf(z), Error);
  CHECK_THROWS_AS(mdf(z), Error);
  CHECK_THROWS_AS(psd_welch(std::vector<double>(100, 1.0), 2000.0), Error);

  auto x = white(8192, 9);
  const auto p1 = psd_welch(x, 2000.0);
  for (double& v : x) v *= -3.0;
  const auto p3 = psd_welch(x, 2000.0);
  CHECK(total_power(p3) == doctest::Approx(9.0 * total_power(p1)).epsilon(1e-12));
  CHECK(mnf(p3) == doctest::Approx(mnf(p1)).epsilon(1e-12));
  CHECK(mdf(p3) == doctest::Approx(mdf(p1)).epsilon(1e-12));
  CHECK(mnf(p1) >= p1.freqs.front());
  CHECK(mnf(p1) <= p1.freqs.back());
}

TEST_CASE("two equal tones") {
  auto a = sine(50.0, 16384);
  const auto b = sine(150.0, 16384);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  const auto p = psd_welch(a, 2000.0);
  CHECK(std::abs(mnf(p) - 100.0) <= p.df);
  CHECK(mdf(p) >= 50.0);
  CHECK(mdf(p) <= 150.0);
}

TEST_CASE("time stretching lowers MNF and MDF") {
  const auto base = white(40000, 21);
  auto stretched = [&](double r) {
    std::vector<double> out(20000);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double t = static_cast<double>(i) / r;
      const auto k = static_cast<std::size_t>(t);
      const double f = t - static_cast<double>(k);
      out[i] = (1.0 - f) * base[k] + f * base[k + 1];
    }
    return out;
  };
  const auto p1 = psd_welch(stretched(1.0), 2000.0);
  const auto p2 = psd_welch(stretched(1.5), 2000.0);
  CHECK(mnf(p2) < mnf(p1));
  CHECK(mdf(p2) < mdf(p1));
}

TEST_CASE("STFT geometry") {
  StftConfig cfg;
  CHECK(stft_frame_count(20000, cfg) == 197);
  const auto [first, last] = band_bins(cfg, 2000.0);
  CHECK(first == 2);
  CHECK(last == 50);
  for (std::size_t len : {400u, 401u, 499u, 500u, 12345u}) {
    CHECK(stft_frame_count(len, cfg) == (len - 400) / 100 + 1);
  }
  const auto s = stft_spectrogram(sine(100.0, 20000), 2000.0, cfg);
  CHECK(s.values.rows() == 49);
  CHECK(s.values.cols() == 197);
  CHECK(s.freqs.front() == doctest::Approx(10.0));
  CHECK(s.freqs.back() == doctest::Approx(250.0));
  for (Eigen::Index c = 0; c < s.values.cols(); ++c) {
    Eigen::Index r = 0;
    s.values.col(c).maxCoeff(&r);
    CHECK(r == 20 - 2);
  }
  const auto z = stft_spectrogram(std::vector<double>(1000, 0.0), 2000.0, cfg);
  CHECK(z.values.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(stft_spectrogram(std::vector<double>(399, 1.0), 2000.0, cfg), Error);
}

TEST_CASE("log z-score normalization") {
  const auto s = stft_spectrogram(white(20000, 3), 2000.0).values;
  const std::vector<Eigen::MatrixXd> src{s};
  const auto stats = fit_norm_stats(src);
  const Eigen::MatrixXd z = log_zscore(s, stats);
  const double mean = z.mean();
  const double sd = std::sqrt((z.array() - mean).square().mean());
  CHECK(std::abs(mean) <= 0.01);
  CHECK(sd >= 0.99);
  CHECK(sd <= 1.01);

  const Eigen::MatrixXd z2 = log_zscore(2.0 * s, stats);
  CHECK(((z2 - z).array() - std::log(2.0) / stats.stddev[0]).abs().maxCoeff() < 1e-6);

  const std::vector<Eigen::MatrixXd> flat{Eigen::MatrixXd::Constant(49, 10, 3.0)};
  CHECK_THROWS_AS(fit_norm_stats(flat), Error);

  const auto per_bin = fit_norm_stats(src, true);
  CHECK(per_bin.mean.size() == 49);
  const Eigen::MatrixXd zb = log_zscore(s, per_bin);
  for (Eigen::Index r = 0; r < zb.rows(); ++r) CHECK(std::abs(zb.row(r).mean()) < 1e-9);
}

TEST_CASE("frame fitting crops and pads") {
  Eigen::MatrixXd m(2, 5);
  m << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10;
  const auto c = fit_frames(m, 3);
  CHECK(c(0, 0) == 2.0);
  CHECK(c(0, 2) == 4.0);
  const auto p = fit_frames(m, 8);
  CHECK(p.cols() == 8);
  CHECK(p(0, 0) == 1.0);
  CHECK(p(1, 7) == 10.0);
  CHECK(fit_frames(m, 5) == m);
}
