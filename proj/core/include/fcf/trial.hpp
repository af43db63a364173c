#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fcf/dsp.hpp"

namespace fcf {

enum class TaskKind { Lateral, Vertical, Circular };

std::string to_string(TaskKind k);
/// Throws InvalidArgument for anything but lateral, vertical or circular.
TaskKind task_from_string(const std::string& s);

/// Three-axis trace sampled at a common rate.
struct Trace3 {
  std::vector<double> x, y, z;
  double fs = 500.0;

  std::size_t size() const { return x.size(); }
  const std::vector<double>& axis(int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

struct TrialMeta {
  std::string trial_id;
  std::string subject;
  TaskKind task = TaskKind::Lateral;
  double damping = 275.0;  // kg/s
  double mass = 10.0;      // kg
  std::array<double, 2> mvc{1.0, 1.0};
  /// Extra generator keys echoed verbatim (flat key/value).
  std::map<std::string, std::string> extra;
};

/// Generator-only ground truth. Absent for recorded trials.
struct TrialTruth {
  int n_cycles = 0;
  std::vector<std::size_t> boundaries;  // 500 Hz sample indices, n_cycles + 1 entries
};

struct Trial {
  Trace3 position;  // m
  Trace3 force;     // N
  std::array<RawTrace, 2> emg;
  std::optional<std::vector<int>> srf;  // Borg CR10 per cycle
  TrialMeta meta;
  std::optional<TrialTruth> truth;

  /// Checks the cross-stream invariants: matching position/force lengths and
  /// EMG duration equal to position duration within one 500 Hz period.
  void validate() const;
};

/// Writes position.csv, force.csv, emg.csv, meta.json and (when present)
/// srf.csv into `dir`, creating it. Output is byte-deterministic.
void write_trial(const Trial& trial, const std::filesystem::path& dir);

/// Reads a trial directory. A missing srf.csv leaves `srf` empty; any
/// malformed file raises IoError naming the file.
Trial read_trial(const std::filesystem::path& dir);

/// Subdirectories of `root` that contain a meta.json, sorted by name.
std::vector<std::filesystem::path> list_trial_dirs(const std::filesystem::path& root);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace fcf
