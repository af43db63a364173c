#include "fcf/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fcf/error.hpp"

namespace fcf::spectral {
namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  // Twiddles from the angle directly; accumulating products drifts.
  std::vector<std::complex<double>> tw(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    tw[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t stride = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * tw[k * stride];
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

void dft_direct(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += a[t] * std::polar(1.0, ang);
    }
    out[k] = acc;
  }
  a = std::move(out);
}

double power_sum(const Psd& psd) {
  double s = 0.0;
  for (double p : psd.power) s += p;
  return s;
}

}  // namespace

void fft(std::vector<std::complex<double>>& data) {
  if (data.size() <= 1) return;
  if (is_pow2(data.size())) {
    fft_radix2(data);
  } else {
    dft_direct(data);
  }
}

std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

Psd psd_welch(std::span<const double> segment, double fs, const WelchConfig& cfg) {
  if (!(fs > 0.0)) throw Error(ErrorCode::InvalidArgument, "fs must be positive");
  if (!(cfg.overlap >= 0.0 && cfg.overlap < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "overlap must lie in [0, 1)");
  }
  const std::size_t n = cfg.seg_len;
  if (n < 2 || segment.size() < n) {
    throw Error(ErrorCode::TooShort, "segment of " + std::to_string(segment.size()) +
                                         " samples is shorter than the Welch segment length");
  }
  const auto overlap_samples = static_cast<std::size_t>(std::lround(cfg.overlap * static_cast<double>(n)));
  const std::size_t step = std::max<std::size_t>(1, n - overlap_samples);
  const std::size_t n_seg = (segment.size() - n) / step + 1;

  const auto w = hann(n);
  double w_energy = 0.0;
  for (double v : w) w_energy += v * v;

  const std::size_t n_bins = n / 2 + 1;
  Psd psd;
  psd.df = fs / static_cast<double>(n);
  psd.freqs.resize(n_bins);
  psd.power.assign(n_bins, 0.0);
  for (std::size_t k = 0; k < n_bins; ++k) psd.freqs[k] = static_cast<double>(k) * psd.df;

  std::vector<std::complex<double>> buf(n);
  for (std::size_t s = 0; s < n_seg; ++s) {
    const std::size_t off = s * step;
    for (std::size_t i = 0; i < n; ++i) buf[i] = segment[off + i] * w[i];
    fft(buf);
    for (std::size_t k = 0; k < n_bins; ++k) psd.power[k] += std::norm(buf[k]);
  }

  const double scale = 1.0 / (fs * w_energy * static_cast<double>(n_seg));
  for (std::size_t k = 0; k < n_bins; ++k) {
    double p = psd.power[k] * scale;
    const bool edge = k == 0 || (n % 2 == 0 && k == n_bins - 1);
    if (!edge) p *= 2.0;
    psd.power[k] = p;
  }
  return psd;
}

double mnf(const Psd& psd) {
  const double total = power_sum(psd);
  if (!(total > 0.0)) throw Error(ErrorCode::ZeroPower, "mean frequency of a zero-power spectrum");
  double acc = 0.0;
  for (std::size_t k = 0; k < psd.power.size(); ++k) acc += psd.freqs[k] * psd.power[k];
  return acc / total;
}

double mdf(const Psd& psd) {
  const double total = power_sum(psd);
  if (!(total > 0.0)) throw Error(ErrorCode::ZeroPower, "median frequency of a zero-power spectrum");
  const double half = 0.5 * total;
  double cum = 0.0;
  for (std::size_t k = 0; k < psd.power.size(); ++k) {
    const double next = cum + psd.power[k];
    if (next >= half) {
      if (k == 0 || psd.power[k] <= 0.0) return psd.freqs[k];
      const double frac = (half - cum) / psd.power[k];
      return psd.freqs[k - 1] + frac * (psd.freqs[k] - psd.freqs[k - 1]);
    }
    cum = next;
  }
  return psd.freqs.back();
}

double total_power(const Psd& psd) { return power_sum(psd) * psd.df; }

std::pair<std::size_t, std::size_t> band_bins(const StftConfig& cfg, double fs) {
  const double bin_hz = fs / static_cast<double>(cfg.window);
  const auto first = static_cast<std::size_t>(std::ceil(cfg.band_low / bin_hz - 1e-9));
  const auto last = static_cast<std::size_t>(std::floor(cfg.band_high / bin_hz + 1e-9));
  if (last < first || last > cfg.window / 2) {
    throw Error(ErrorCode::InvalidArgument, "spectrogram band contains no FFT bins");
  }
  return {first, last};
}

std::size_t stft_frame_count(std::size_t length, const StftConfig& cfg) {
  if (length < cfg.window) return 0;
  return (length - cfg.window) / (cfg.window - cfg.overlap) + 1;
}

MagnitudeSpectrogram stft_spectrogram(std::span<const double> samples, double fs,
                                      const StftConfig& cfg) {
  if (cfg.overlap >= cfg.window) throw Error(ErrorCode::InvalidArgument, "overlap must be below window");
  if (samples.size() < cfg.window) {
    throw Error(ErrorCode::TooShort, "trace shorter than the STFT window");
  }
  const auto [first, last] = band_bins(cfg, fs);
  const std::size_t n_rows = last - first + 1;
  const std::size_t hop = cfg.window - cfg.overlap;
  const std::size_t n_frames = stft_frame_count(samples.size(), cfg);
  const std::size_t n = cfg.window;
  const auto w = hann(n);

  // Only the in-band bins are needed, so a direct DFT against a cached
  // twiddle table beats a full transform of a non-power-of-two window.
  std::vector<double> cos_t(n), sin_t(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ang = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    cos_t[i] = std::cos(ang);
    sin_t[i] = std::sin(ang);
  }

  MagnitudeSpectrogram out;
  out.fs = fs;
  out.values.resize(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(n_frames));
  for (std::size_t r = 0; r < n_rows; ++r) {
    out.freqs.push_back(static_cast<double>(first + r) * fs / static_cast<double>(n));
  }
  std::vector<double> frame(n);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::size_t off = f * hop;
    out.times.push_back((static_cast<double>(off) + 0.5 * static_cast<double>(n)) / fs);
    for (std::size_t i = 0; i < n; ++i) frame[i] = samples[off + i] * w[i];
    for (std::size_t r = 0; r < n_rows; ++r) {
      const std::size_t k = first + r;
      double re = 0.0, im = 0.0;
      std::size_t idx = 0;
      for (std::size_t i = 0; i < n; ++i) {
        re += frame[i] * cos_t[idx];
        im -= frame[i] * sin_t[idx];
        idx += k;
        if (idx >= n) idx -= n;
      }
      out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)) = std::hypot(re, im);
    }
  }
  return out;
}

NormStats fit_norm_stats(std::span<const Eigen::MatrixXd> raw, bool per_bin) {
  if (raw.empty()) throw Error(ErrorCode::EmptyData, "no spectrograms to fit statistics on");
  const Eigen::Index rows = raw.front().rows();
  const std::size_t n_groups = per_bin ? static_cast<std::size_t>(rows) : 1;
  std::vector<double> sum(n_groups, 0.0), sum_sq(n_groups, 0.0);
  std::vector<double> count(n_groups, 0.0);
  for (const auto& m : raw) {
    if (m.rows() != rows) throw Error(ErrorCode::ShapeMismatch, "spectrograms differ in bin count");
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) {
        const double v = std::log(m(r, c) + kLogEpsilon);
        const std::size_t g = per_bin ? static_cast<std::size_t>(r) : 0;
        sum[g] += v;
        count[g] += 1.0;
      }
    }
  }
  NormStats stats;
  stats.per_bin = per_bin;
  stats.mean.resize(n_groups);
  for (std::size_t g = 0; g < n_groups; ++g) stats.mean[g] = sum[g] / count[g];
  // Second pass around the mean keeps the variance accurate for large offsets.
  for (const auto& m : raw) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) {
        const std::size_t g = per_bin ? static_cast<std::size_t>(r) : 0;
        const double d = std::log(m(r, c) + kLogEpsilon) - stats.mean[g];
        sum_sq[g] += d * d;
      }
    }
  }
  stats.stddev.resize(n_groups);
  for (std::size_t g = 0; g < n_groups; ++g) {
    stats.stddev[g] = std::sqrt(sum_sq[g] / count[g]);
    if (stats.stddev[g] < 1e-12) {
      throw Error(ErrorCode::DegenerateStats, "log-magnitude standard deviation is zero");
    }
  }
  return stats;
}

Eigen::MatrixXd log_zscore(const Eigen::MatrixXd& raw, const NormStats& stats) {
  if (stats.mean.empty() || stats.mean.size() != stats.stddev.size()) {
    throw Error(ErrorCode::InvalidArgument, "incomplete normalization statistics");
  }
  if (stats.per_bin && stats.mean.size() != static_cast<std::size_t>(raw.rows())) {
    throw Error(ErrorCode::ShapeMismatch, "per-bin statistics do not match spectrogram rows");
  }
  for (double s : stats.stddev) {
    if (s < 1e-12) throw Error(ErrorCode::DegenerateStats, "standard deviation is zero");
  }
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
      const std::size_t g = stats.per_bin ? static_cast<std::size_t>(r) : 0;
      out(r, c) = (std::log(raw(r, c) + kLogEpsilon) - stats.mean[g]) / stats.stddev[g];
    }
  }
  return out;
}

Eigen::MatrixXd fit_frames(const Eigen::MatrixXd& m, std::size_t frames) {
  const auto target = static_cast<Eigen::Index>(frames);
  if (m.cols() == 0) throw Error(ErrorCode::EmptyData, "spectrogram has no frames");
  if (m.cols() == target) return m;
  Eigen::MatrixXd out(m.rows(), target);
  if (m.cols() > target) {
    const Eigen::Index start = (m.cols() - target) / 2;
    out = m.middleCols(start, target);
    return out;
  }
  const Eigen::Index left = (target - m.cols()) / 2;
  for (Eigen::Index c = 0; c < target; ++c) {
    const Eigen::Index src = std::clamp<Eigen::Index>(c - left, 0, m.cols() - 1);
    out.col(c) = m.col(src);
  }
  return out;
}

}  // namespace fcf::spectral
