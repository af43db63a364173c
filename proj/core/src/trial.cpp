#include "fcf/trial.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fcf/error.hpp"

namespace fcf {
namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Lateral: return "lateral";
    case TaskKind::Vertical: return "vertical";
    case TaskKind::Circular: return "circular";
  }
  return "?";
}

TaskKind task_from_string(const std::string& s) {
  if (s == "lateral") return TaskKind::Lateral;
  if (s == "vertical") return TaskKind::Vertical;
  if (s == "circular") return TaskKind::Circular;
  throw Error(ErrorCode::InvalidArgument, "unknown task '" + s + "'");
}

void Trial::validate() const {
  const std::size_t n = position.size();
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "trial has no position samples");
  if (position.y.size() != n || position.z.size() != n) {
    throw Error(ErrorCode::InvalidArgument, "position axes differ in length");
  }
  if (force.size() != n || force.y.size() != n || force.z.size() != n) {
    throw Error(ErrorCode::InvalidArgument, "force and position lengths differ");
  }
  for (const auto& ch : emg) ch.validate();
  if (emg[0].samples.size() != emg[1].samples.size()) {
    throw Error(ErrorCode::InvalidArgument, "EMG channels differ in length");
  }
  const double pos_duration = static_cast<double>(n) / position.fs;
  const double emg_duration = static_cast<double>(emg[0].samples.size()) / emg[0].fs;
  if (std::abs(pos_duration - emg_duration) > 1.0 / position.fs + 1e-12) {
    throw Error(ErrorCode::InvalidArgument, "EMG and position durations disagree");
  }
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string format_sig(double v, int digits) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, digits);
  return std::string(buf, res.ptr);
}

void write_text(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + p.string() + " for writing");
  out << content;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_trace3(const Trace3& tr, const fs::path& p) {
  std::string s = "t,x,y,z\n";
  s.reserve(tr.size() * 48);
  for (std::size_t i = 0; i < tr.size(); ++i) {
    s += format_double(static_cast<double>(i) / tr.fs);
    s += ',';
    s += format_sig(tr.x[i], 12);
    s += ',';
    s += format_sig(tr.y[i], 12);
    s += ',';
    s += format_sig(tr.z[i], 12);
    s += '\n';
  }
  write_text(p, s);
}

// Parses a numeric CSV with a one-line header into columns.
std::vector<std::vector<double>> parse_csv(const fs::path& p, std::size_t expected_cols) {
  const std::string text = read_text(p);
  std::vector<std::vector<double>> cols(expected_cols);
  std::size_t pos = text.find('\n');
  if (pos == std::string::npos) throw Error(ErrorCode::IoError, p.string() + ": missing header");
  std::size_t line_no = 1;
  ++pos;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    std::string_view line(text.data() + pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) {
      std::size_t col = 0;
      const char* cur = line.data();
      const char* stop = line.data() + line.size();
      while (true) {
        if (col >= expected_cols) {
          throw Error(ErrorCode::IoError, p.string() + ": too many columns on line " + std::to_string(line_no));
        }
        double v = 0.0;
        auto res = std::from_chars(cur, stop, v);
        if (res.ec != std::errc() || !std::isfinite(v)) {
          throw Error(ErrorCode::IoError, p.string() + ": bad number on line " + std::to_string(line_no));
        }
        cols[col++].push_back(v);
        cur = res.ptr;
        if (cur == stop) break;
        if (*cur != ',') {
          throw Error(ErrorCode::IoError, p.string() + ": malformed line " + std::to_string(line_no));
        }
        ++cur;
      }
      if (col != expected_cols) {
        throw Error(ErrorCode::IoError, p.string() + ": expected " + std::to_string(expected_cols) +
                                            " columns on line " + std::to_string(line_no));
      }
    }
    pos = end + 1;
  }
  return cols;
}

double infer_rate(const std::vector<double>& t, const fs::path& p, double fallback) {
  if (t.size() < 2) return fallback;
  const double dt = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
  if (!(dt > 0.0)) throw Error(ErrorCode::IoError, p.string() + ": time column is not increasing");
  return std::round(1.0 / dt * 1e6) / 1e6;
}

Trace3 read_trace3(const fs::path& p) {
  auto cols = parse_csv(p, 4);
  Trace3 tr;
  tr.fs = infer_rate(cols[0], p, 500.0);
  tr.x = std::move(cols[1]);
  tr.y = std::move(cols[2]);
  tr.z = std::move(cols[3]);
  return tr;
}

}  // namespace

void write_trial(const Trial& trial, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());

  write_trace3(trial.position, dir / "position.csv");
  write_trace3(trial.force, dir / "force.csv");

  {
    const auto& a = trial.emg[0].samples;
    const auto& b = trial.emg[1].samples;
    std::string s = "t,ch1,ch2\n";
    s.reserve(a.size() * 40);
    for (std::size_t i = 0; i < a.size(); ++i) {
      s += format_double(static_cast<double>(i) / trial.emg[0].fs);
      s += ',';
      s += format_sig(a[i], 10);
      s += ',';
      s += format_sig(b[i], 10);
      s += '\n';
    }
    write_text(dir / "emg.csv", s);
  }

  if (trial.srf) {
    std::string s = "cycle,score\n";
    for (std::size_t k = 0; k < trial.srf->size(); ++k) {
      s += std::to_string(k + 1) + "," + std::to_string((*trial.srf)[k]) + "\n";
    }
    write_text(dir / "srf.csv", s);
  }

  json meta;
  meta["trial"] = trial.meta.trial_id;
  meta["subject"] = trial.meta.subject;
  meta["task"] = to_string(trial.meta.task);
  meta["b"] = trial.meta.damping;
  meta["m"] = trial.meta.mass;
  meta["mvc1"] = trial.meta.mvc[0];
  meta["mvc2"] = trial.meta.mvc[1];
  meta["channels"] = {to_string(trial.emg[0].channel), to_string(trial.emg[1].channel)};
  if (!trial.meta.extra.empty()) meta["generator"] = trial.meta.extra;
  if (trial.truth) {
    meta["truth"]["n_cycles"] = trial.truth->n_cycles;
    meta["truth"]["boundaries"] = trial.truth->boundaries;
  }
  write_text(dir / "meta.json", meta.dump(2) + "\n");
}

Trial read_trial(const fs::path& dir) {
  Trial trial;
  const fs::path meta_path = dir / "meta.json";
  json meta;
  try {
    meta = json::parse(read_text(meta_path));
    trial.meta.trial_id = meta.value("trial", dir.filename().string());
    trial.meta.subject = meta.at("subject").get<std::string>();
    trial.meta.task = task_from_string(meta.at("task").get<std::string>());
    trial.meta.damping = meta.at("b").get<double>();
    trial.meta.mass = meta.at("m").get<double>();
    trial.meta.mvc = {meta.at("mvc1").get<double>(), meta.at("mvc2").get<double>()};
    if (meta.contains("generator")) {
      for (auto& [k, v] : meta["generator"].items()) {
        trial.meta.extra[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
    if (meta.contains("truth")) {
      TrialTruth truth;
      truth.n_cycles = meta["truth"].at("n_cycles").get<int>();
      truth.boundaries = meta["truth"].at("boundaries").get<std::vector<std::size_t>>();
      trial.truth = truth;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, meta_path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::IoError, meta_path.string() + ": " + e.what());
  }

  std::array<Muscle, 2> channels{Muscle::LD, Muscle::PD};
  if (meta.contains("channels")) {
    const auto labels = meta["channels"].get<std::vector<std::string>>();
    if (labels.size() != 2) throw Error(ErrorCode::IoError, meta_path.string() + ": expected 2 channels");
    channels = {muscle_from_string(labels[0]), muscle_from_string(labels[1])};
  }

  trial.position = read_trace3(dir / "position.csv");
  trial.force = read_trace3(dir / "force.csv");

  const fs::path emg_path = dir / "emg.csv";
  auto emg = parse_csv(emg_path, 3);
  const double emg_fs = infer_rate(emg[0], emg_path, 2000.0);
  for (int c = 0; c < 2; ++c) {
    trial.emg[c].samples = std::move(emg[c + 1]);
    trial.emg[c].fs = emg_fs;
    trial.emg[c].channel = channels[c];
  }
  if (trial.emg[0].samples.empty()) throw Error(ErrorCode::IoError, emg_path.string() + ": no samples");

  const fs::path srf_path = dir / "srf.csv";
  if (fs::exists(srf_path)) {
    auto cols = parse_csv(srf_path, 2);
    std::vector<int> scores;
    for (double v : cols[1]) scores.push_back(static_cast<int>(std::lround(v)));
    trial.srf = std::move(scores);
  }
  try {
    trial.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::IoError, dir.string() + ": " + e.what());
  }
  return trial;
}

std::vector<fs::path> list_trial_dirs(const fs::path& root) {
  std::vector<fs::path> out;
  if (!fs::is_directory(root)) throw Error(ErrorCode::IoError, root.string() + " is not a directory");
  if (fs::exists(root / "meta.json")) return {root};
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace fcf
