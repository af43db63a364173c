#include "fcf/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "fcf/error.hpp"

namespace fcf {

cycles::ConditionedPair condition_emg(const Trial& trial, const PipelineConfig& cfg) {
  cycles::ConditionedPair out;
  for (int c = 0; c < 2; ++c) {
    dsp::BandpassSpec spec = cfg.bandpass;
    spec.fs = trial.emg[c].fs;
    const auto coeffs = dsp::design_bandpass(spec);
    const auto filtered = dsp::filter_zero_phase(trial.emg[c], coeffs, cfg.phase);
    out.normalized[c] = dsp::normalize_mvc(filtered, trial.meta.mvc[c]);
  }
  return out;
}

TrialSamples process_trial(const Trial& trial, const PipelineConfig& cfg) {
  trial.validate();
  TrialSamples out;
  out.trial_id = trial.meta.trial_id;
  out.subject = trial.meta.subject;
  out.task = trial.meta.task;
  out.channels = {trial.emg[0].channel, trial.emg[1].channel};

  const auto windows = cycles::segment_cycles(trial, cfg.segment);
  const auto emg = condition_emg(trial, cfg);

  const int n = static_cast<int>(windows.size());
  for (int k = 0; k < n; ++k) {
    const auto table = cycles::interval_features(windows[k], emg, cfg.welch);
    out.raw.push_back(cycles::cycle_feature_vector(table, k + 1, out.trial_id));
    if (cfg.spectrograms) {
      CycleSpectrogram spec;
      for (int c = 0; c < 2; ++c) {
        const auto& s = emg.normalized[c].samples;
        std::span<const double> seg(s.data() + windows[k].emg_start, windows[k].emg_end - windows[k].emg_start);
        auto mag = spectral::stft_spectrogram(seg, emg.normalized[c].fs, cfg.stft);
        spec[c] = spectral::fit_frames(mag.values, cfg.cnn_frames);
      }
      out.spectrograms.push_back(std::move(spec));
    }
  }
  out.relative = cycles::relative_change(out.raw);
  out.fcf = cycles::fcf_labels(n);
  if (trial.srf) out.srf_percent = cycles::srf_normalize(*trial.srf, n);
  return out;
}

namespace io {
namespace fs = std::filesystem;

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(sep, pos);
    out.push_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

double parse_double(std::string_view s, const fs::path& p, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::IoError, p.string() + ": bad number '" + std::string(s) + "' on line " +
                                        std::to_string(line));
  }
  return v;
}

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "container is little-endian");
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& p) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::IoError, p.string() + ": truncated spectrogram container");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const fs::path& p) {
  const auto n = get<std::uint16_t>(in, p);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw Error(ErrorCode::IoError, p.string() + ": truncated string");
  return s;
}

constexpr char kMagic[8] = {'F', 'C', 'F', 'S', 'P', 'E', 'C', '1'};

}  // namespace

void write_features_csv(const fs::path& path, const std::vector<TrialSamples>& trials) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  const auto names = cycles::feature_names();
  out << "subject,trial,task,channels,cycle";
  for (const auto& n : names) out << ',' << n;
  for (const auto& n : names) out << ",rel_" << n;
  out << ",fcf,srf\n";
  for (const auto& t : trials) {
    const std::string channels = to_string(t.channels[0]) + "+" + to_string(t.channels[1]);
    for (std::size_t k = 0; k < t.size(); ++k) {
      out << t.subject << ',' << t.trial_id << ',' << to_string(t.task) << ',' << channels << ',' << (k + 1);
      for (double v : t.raw[k].values) out << ',' << format_double(v);
      for (int j = 0; j < cycles::kVectorSize; ++j) {
        out << ',' << format_double(t.relative(static_cast<Eigen::Index>(k), j));
      }
      out << ',' << format_double(t.fcf[k]) << ',';
      if (t.srf_percent) out << format_double((*t.srf_percent)[k]);
      out << '\n';
    }
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::vector<TrialSamples> read_features_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::IoError, path.string() + ": empty file");
  constexpr std::size_t kCols = 5 + 2 * cycles::kVectorSize + 2;
  if (split(line, ',').size() != kCols) throw Error(ErrorCode::IoError, path.string() + ": unexpected header");

  std::vector<TrialSamples> out;
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::vector<std::vector<double>>> rel_rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != kCols) {
      throw Error(ErrorCode::IoError, path.string() + ": wrong column count on line " + std::to_string(line_no));
    }
    const std::string key = std::string(f[0]) + "/" + std::string(f[1]);
    auto it = index.find(key);
    if (it == index.end()) {
      TrialSamples t;
      t.subject = std::string(f[0]);
      t.trial_id = std::string(f[1]);
      t.task = task_from_string(std::string(f[2]));
      const auto ch = split(f[3], '+');
      if (ch.size() != 2) throw Error(ErrorCode::IoError, path.string() + ": bad channel pair on line " + std::to_string(line_no));
      t.channels = {muscle_from_string(std::string(ch[0])), muscle_from_string(std::string(ch[1]))};
      it = index.emplace(key, out.size()).first;
      out.push_back(std::move(t));
    }
    TrialSamples& t = out[it->second];
    cycles::CycleFeatureVector v;
    v.cycle = static_cast<int>(parse_double(f[4], path, line_no));
    v.trial_id = t.trial_id;
    std::vector<double> rel(cycles::kVectorSize);
    for (int j = 0; j < cycles::kVectorSize; ++j) {
      v.values[j] = parse_double(f[5 + j], path, line_no);
      rel[j] = parse_double(f[5 + cycles::kVectorSize + j], path, line_no);
    }
    t.raw.push_back(v);
    rel_rows[key].push_back(std::move(rel));
    t.fcf.push_back(parse_double(f[kCols - 2], path, line_no));
    if (!f[kCols - 1].empty()) {
      if (!t.srf_percent) t.srf_percent.emplace();
      t.srf_percent->push_back(parse_double(f[kCols - 1], path, line_no));
    }
  }
  for (auto& t : out) {
    const auto& rows = rel_rows[t.subject + "/" + t.trial_id];
    t.relative.resize(static_cast<Eigen::Index>(rows.size()), cycles::kVectorSize);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      for (int j = 0; j < cycles::kVectorSize; ++j) t.relative(static_cast<Eigen::Index>(k), j) = rows[k][j];
    }
    if (t.srf_percent && t.srf_percent->size() != t.size()) {
      throw Error(ErrorCode::IoError, path.string() + ": trial " + t.trial_id + " has partial SRF labels");
    }
  }
  return out;
}

void write_spectrograms(const fs::path& path, const std::vector<TrialSamples>& trials,
                        const SpectrogramHeader& header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, 1);
  put<double>(out, header.fs);
  put<double>(out, header.stft.band_low);
  put<double>(out, header.stft.band_high);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(header.stft.window));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(header.stft.overlap));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(header.n_bins));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(header.n_frames));
  put<std::uint32_t>(out, 2);
  put<std::uint8_t>(out, header.stats ? 1 : 0);
  if (header.stats) {
    put<std::uint8_t>(out, header.stats->per_bin ? 1 : 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(header.stats->mean.size()));
    for (double v : header.stats->mean) put<double>(out, v);
    for (double v : header.stats->stddev) put<double>(out, v);
  }
  std::uint32_t n_records = 0;
  for (const auto& t : trials) n_records += static_cast<std::uint32_t>(t.spectrograms.size());
  put<std::uint32_t>(out, n_records);
  for (const auto& t : trials) {
    for (std::size_t k = 0; k < t.spectrograms.size(); ++k) {
      put_string(out, t.subject);
      put_string(out, t.trial_id);
      put<std::uint8_t>(out, static_cast<std::uint8_t>(t.task));
      put<std::uint8_t>(out, static_cast<std::uint8_t>(t.channels[0]));
      put<std::uint8_t>(out, static_cast<std::uint8_t>(t.channels[1]));
      put<std::int32_t>(out, static_cast<std::int32_t>(k + 1));
      put<double>(out, t.fcf.at(k));
      for (const auto& m : t.spectrograms[k]) {
        if (static_cast<std::size_t>(m.rows()) != header.n_bins || static_cast<std::size_t>(m.cols()) != header.n_frames) {
          throw Error(ErrorCode::ShapeMismatch, "spectrogram dims differ from container header");
        }
        out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
      }
    }
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

SpectrogramHeader read_spectrograms(const fs::path& path, std::vector<TrialSamples>& trials) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw Error(ErrorCode::IoError, path.string() + ": not a spectrogram container");
  if (get<std::uint32_t>(in, path) != 1) throw Error(ErrorCode::IoError, path.string() + ": unsupported version");
  SpectrogramHeader h;
  h.fs = get<double>(in, path);
  h.stft.band_low = get<double>(in, path);
  h.stft.band_high = get<double>(in, path);
  h.stft.window = get<std::uint32_t>(in, path);
  h.stft.overlap = get<std::uint32_t>(in, path);
  h.n_bins = get<std::uint32_t>(in, path);
  h.n_frames = get<std::uint32_t>(in, path);
  const auto n_channels = get<std::uint32_t>(in, path);
  if (n_channels != 2) throw Error(ErrorCode::IoError, path.string() + ": expected 2 channels");
  if (get<std::uint8_t>(in, path)) {
    spectral::NormStats st;
    st.per_bin = get<std::uint8_t>(in, path) != 0;
    const auto n = get<std::uint32_t>(in, path);
    st.mean.resize(n);
    st.stddev.resize(n);
    for (auto& v : st.mean) v = get<double>(in, path);
    for (auto& v : st.stddev) v = get<double>(in, path);
    h.stats = st;
  }
  const auto n_records = get<std::uint32_t>(in, path);

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < trials.size(); ++i) index[trials[i].subject + "/" + trials[i].trial_id] = i;

  for (std::uint32_t r = 0; r < n_records; ++r) {
    const std::string subject = get_string(in, path);
    const std::string trial_id = get_string(in, path);
    const auto task = static_cast<TaskKind>(get<std::uint8_t>(in, path));
    const auto ch0 = static_cast<Muscle>(get<std::uint8_t>(in, path));
    const auto ch1 = static_cast<Muscle>(get<std::uint8_t>(in, path));
    const auto cycle = get<std::int32_t>(in, path);
    const double fcf = get<double>(in, path);
    CycleSpectrogram spec;
    for (auto& m : spec) {
      m.resize(static_cast<Eigen::Index>(h.n_bins), static_cast<Eigen::Index>(h.n_frames));
      in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
      if (!in) throw Error(ErrorCode::IoError, path.string() + ": truncated spectrogram record");
    }
    const std::string key = subject + "/" + trial_id;
    auto it = index.find(key);
    if (it == index.end()) {
      TrialSamples t;
      t.subject = subject;
      t.trial_id = trial_id;
      t.task = task;
      t.channels = {ch0, ch1};
      it = index.emplace(key, trials.size()).first;
      trials.push_back(std::move(t));
    }
    TrialSamples& t = trials[it->second];
    if (t.spectrograms.size() != static_cast<std::size_t>(cycle - 1)) {
      throw Error(ErrorCode::IoError, path.string() + ": out-of-order cycle records for " + key);
    }
    t.spectrograms.push_back(std::move(spec));
    if (t.fcf.size() < t.spectrograms.size()) t.fcf.push_back(fcf);
  }
  return h;
}

}  // namespace io
}  // namespace fcf
