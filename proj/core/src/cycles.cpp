#include "fcf/cycles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fcf/error.hpp"

namespace fcf::cycles {
namespace {

std::vector<std::size_t> midline_boundaries(const std::vector<double>& p, double hysteresis) {
  const auto [lo_it, hi_it] = std::minmax_element(p.begin(), p.end());
  const double mid = 0.5 * (*lo_it + *hi_it);
  const double amp = 0.5 * (*hi_it - *lo_it);
  std::vector<std::size_t> out;
  if (!(amp > 1e-6)) return out;
  const double h = hysteresis * amp;

  bool armed = p[0] < mid + h;
  std::optional<std::size_t> candidate;
  if (armed && p[0] > mid) candidate = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (armed) {
      if (p[i - 1] <= mid && p[i] > mid) candidate = i;
      if (p[i] > mid + h && candidate) {
        out.push_back(*candidate);
        candidate.reset();
        armed = false;
      }
    } else if (p[i] < mid - h) {
      armed = true;
      candidate.reset();
    }
  }
  return out;
}

std::vector<std::size_t> angle_boundaries(const std::vector<double>& x, const std::vector<double>& y) {
  const auto [xl, xh] = std::minmax_element(x.begin(), x.end());
  const auto [yl, yh] = std::minmax_element(y.begin(), y.end());
  const double cx = 0.5 * (*xl + *xh);
  const double cy = 0.5 * (*yl + *yh);
  const double radius = 0.25 * ((*xh - *xl) + (*yh - *yl));
  std::vector<std::size_t> out;
  if (!(radius > 1e-6)) return out;

  std::vector<double> theta(x.size());
  double prev = std::atan2(y[0] - cy, x[0] - cx);
  theta[0] = prev;
  for (std::size_t i = 1; i < x.size(); ++i) {
    double a = std::atan2(y[i] - cy, x[i] - cx);
    double d = a - prev;
    while (d > std::numbers::pi) d -= 2.0 * std::numbers::pi;
    while (d < -std::numbers::pi) d += 2.0 * std::numbers::pi;
    theta[i] = theta[i - 1] + d;
    prev = a;
  }
  const double dir = theta.back() >= theta.front() ? 1.0 : -1.0;
  out.push_back(0);
  double next = 2.0 * std::numbers::pi;
  for (std::size_t i = 1; i < theta.size(); ++i) {
    if (dir * (theta[i] - theta[0]) >= next) {
      out.push_back(i);
      next += 2.0 * std::numbers::pi;
    }
  }
  return out;
}

}  // namespace

std::string to_string(Feature f) {
  switch (f) {
    case Feature::MNF: return "MNF";
    case Feature::MDF: return "MDF";
    case Feature::TP: return "TP";
    case Feature::RMS: return "RMS";
  }
  return "?";
}

std::vector<CycleWindow> segment_cycles(const Trial& trial, const SegmentConfig& cfg) {
  const auto& pos = trial.position;
  if (pos.size() < 2) throw Error(ErrorCode::NoCycles, "position trace too short");

  std::vector<std::size_t> b;
  switch (trial.meta.task) {
    case TaskKind::Lateral: b = midline_boundaries(pos.x, cfg.hysteresis); break;
    case TaskKind::Vertical: b = midline_boundaries(pos.z, cfg.hysteresis); break;
    case TaskKind::Circular: b = angle_boundaries(pos.x, pos.y); break;
  }
  if (b.size() < 2) throw Error(ErrorCode::NoCycles, "no full movement cycle found");

  const double ratio = trial.emg[0].fs / pos.fs;
  const std::size_t emg_len = trial.emg[0].samples.size();
  std::vector<CycleWindow> out;
  for (std::size_t k = 0; k + 1 < b.size(); ++k) {
    CycleWindow w;
    w.start = b[k];
    w.end = b[k + 1];
    w.emg_start = std::min(emg_len, static_cast<std::size_t>(std::llround(static_cast<double>(w.start) * ratio)));
    w.emg_end = std::min(emg_len, static_cast<std::size_t>(std::llround(static_cast<double>(w.end) * ratio)));
    out.push_back(w);
  }
  return out;
}

IntervalTable interval_features(const CycleWindow& window, const ConditionedPair& emg,
                                const spectral::WelchConfig& welch, bool allow_missing) {
  if (window.emg_end <= window.emg_start) throw Error(ErrorCode::TooShort, "empty cycle window");
  const std::size_t len = window.emg_end - window.emg_start;
  if (len < kIntervalCount * welch.seg_len) {
    throw Error(ErrorCode::TooShort, "cycle of " + std::to_string(len) + " EMG samples is shorter than " +
                                         std::to_string(kIntervalCount) + " Welch segments");
  }
  IntervalTable table;
  for (int c = 0; c < kChannelCount; ++c) {
    const auto& tr = emg.normalized[c];
    if (tr.stage != dsp::Stage::Normalized) {
      throw Error(ErrorCode::WrongStage, "interval features expect MVC-normalized EMG");
    }
    if (window.emg_end > tr.samples.size()) throw Error(ErrorCode::TooShort, "window exceeds EMG length");
    for (int i = 0; i < kIntervalCount; ++i) {
      const std::size_t a = window.emg_start + len * static_cast<std::size_t>(i) / kIntervalCount;
      const std::size_t b = window.emg_start + len * static_cast<std::size_t>(i + 1) / kIntervalCount;
      std::span<const double> seg(tr.samples.data() + a, b - a);

      auto& cell = table.values[i][c];
      const auto psd = spectral::psd_welch(seg, tr.fs, welch);
      try {
        cell[static_cast<int>(Feature::MNF)] = spectral::mnf(psd);
        cell[static_cast<int>(Feature::MDF)] = spectral::mdf(psd);
      } catch (const Error& e) {
        if (!allow_missing || e.code() != ErrorCode::ZeroPower) throw;
      }
      cell[static_cast<int>(Feature::TP)] = spectral::total_power(psd);

      std::vector<double> rect(seg.size());
      std::transform(seg.begin(), seg.end(), rect.begin(), [](double v) { return std::abs(v); });
      cell[static_cast<int>(Feature::RMS)] = dsp::rms(rect);
    }
  }
  return table;
}

std::vector<std::string> feature_names() {
  static const char* kNames[] = {"mnf", "mdf", "tp", "rms"};
  std::vector<std::string> out;
  for (int c = 0; c < kChannelCount; ++c) {
    for (int f = 0; f < kFeatureCount; ++f) {
      for (const char* agg : {"min", "max"}) {
        out.push_back("ch" + std::to_string(c + 1) + "_" + kNames[f] + "_" + agg);
      }
    }
  }
  return out;
}

Feature feature_family(int j) { return static_cast<Feature>((j / 2) % kFeatureCount); }

CycleFeatureVector cycle_feature_vector(const IntervalTable& intervals, int cycle, const std::string& trial_id) {
  CycleFeatureVector out;
  out.cycle = cycle;
  out.trial_id = trial_id;
  for (int c = 0; c < kChannelCount; ++c) {
    for (int f = 0; f < kFeatureCount; ++f) {
      double lo = 0.0, hi = 0.0;
      for (int i = 0; i < kIntervalCount; ++i) {
        const auto& v = intervals.values[i][c][f];
        if (!v) {
          throw Error(ErrorCode::IncompleteIntervals, "interval " + std::to_string(i + 1) + " lacks " +
                                                          to_string(static_cast<Feature>(f)) + " for channel " +
                                                          std::to_string(c + 1));
        }
        if (i == 0) {
          lo = hi = *v;
        } else {
          lo = std::min(lo, *v);
          hi = std::max(hi, *v);
        }
      }
      out.values[CycleFeatureVector::index(c, static_cast<Feature>(f), false)] = lo;
      out.values[CycleFeatureVector::index(c, static_cast<Feature>(f), true)] = hi;
    }
  }
  return out;
}

Eigen::MatrixXd relative_change(const std::vector<CycleFeatureVector>& samples) {
  if (samples.empty()) throw Error(ErrorCode::DegenerateBaseline, "no first cycle to normalize against");
  const auto& base = samples.front().values;
  for (int j = 0; j < kVectorSize; ++j) {
    if (!(std::abs(base[j]) > 1e-12)) {
      throw Error(ErrorCode::DegenerateBaseline, "first-cycle feature " + feature_names()[j] + " is zero");
    }
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(samples.size()), kVectorSize);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    for (int j = 0; j < kVectorSize; ++j) {
      out(static_cast<Eigen::Index>(k), j) = 100.0 * (samples[k].values[j] - base[j]) / base[j];
    }
  }
  return out;
}

std::vector<double> fcf_labels(int n_cycles) {
  if (n_cycles < 1) throw Error(ErrorCode::InvalidArgument, "cycle count must be at least 1");
  std::vector<double> out(static_cast<std::size_t>(n_cycles));
  for (int k = 1; k <= n_cycles; ++k) out[k - 1] = static_cast<double>(k) / n_cycles;
  return out;
}

std::vector<double> srf_normalize(const std::vector<int>& borg, int n_cycles) {
  if (static_cast<int>(borg.size()) != n_cycles || borg.empty()) {
    throw Error(ErrorCode::OutOfRange, "SRF has " + std::to_string(borg.size()) + " scores for " +
                                           std::to_string(n_cycles) + " cycles");
  }
  for (int s : borg) {
    if (s < 0 || s > 10) throw Error(ErrorCode::OutOfRange, "Borg score " + std::to_string(s) + " outside [0, 10]");
  }
  if (borg.back() != 10) throw Error(ErrorCode::OutOfRange, "final Borg score must be 10");

  const std::size_t n = borg.size();
  std::vector<std::size_t> onsets{0};
  for (std::size_t k = 1; k < n; ++k) {
    if (borg[k] != borg[k - 1]) onsets.push_back(k);
  }
  std::vector<double> out(n);
  for (std::size_t o = 0; o < onsets.size(); ++o) {
    const std::size_t a = onsets[o];
    const double va = 10.0 * borg[a];
    if (o + 1 == onsets.size()) {
      for (std::size_t k = a; k < n; ++k) out[k] = va;
      break;
    }
    const std::size_t b = onsets[o + 1];
    const double vb = 10.0 * borg[b];
    for (std::size_t k = a; k < b; ++k) {
      out[k] = va + (vb - va) * static_cast<double>(k - a) / static_cast<double>(b - a);
    }
  }
  return out;
}

}  // namespace fcf::cycles
