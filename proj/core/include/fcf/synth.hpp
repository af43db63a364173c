#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fcf/dsp.hpp"
#include "fcf/trial.hpp"

namespace fcf::synth {

/// Derives an independent stream seed (splitmix64 finalizer over the mixed
/// inputs). Used everywhere a child seed is spawned from a parent.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a, std::uint64_t b = 0);

struct AdmittanceParams {
  double mass = 10.0;      // kg
  double damping = 275.0;  // kg/s
  double control_rate = 500.0;

  void validate() const;
};

struct TaskSpec {
  TaskKind kind = TaskKind::Lateral;
  double amplitude = 0.20;  // half excursion (m); circle radius for circular
  double frequency = 0.1;   // Hz
  int n_cycles = 24;
  double tail_cycles = 0.3;  // partial cycle recorded after fatigue onset

  void validate() const;
  static TaskSpec defaults(TaskKind kind, int n_cycles);
};

/// Human force model: PD tracking of the cursor plus damping feedforward.
struct TrackerGains {
  double kp = 10000.0;  // N/m
  double kd = 200.0;    // N s/m
  double force_noise = 0.5;  // N, white
};

struct MotionTraces {
  Trace3 position;
  Trace3 velocity;
  Trace3 force;
  std::vector<double> phase;  // commanded cycle phase (cycles elapsed) per tick
};

/// One exact step of m dv/dt + b v = F with F held over the tick.
double admittance_step(double v, double force, const AdmittanceParams& p);

/// Velocity response to a constant force applied from rest, one entry per tick
/// (entry 0 is the initial rest state).
std::vector<double> step_response(const AdmittanceParams& p, double force, double duration_s);

MotionTraces simulate_admittance(const TaskSpec& task, const AdmittanceParams& params,
                                 const TrackerGains& gains = {}, std::uint64_t seed = 0);

/// Spectral/amplitude model for one muscle channel.
struct MuscleProfile {
  Muscle muscle = Muscle::LD;
  double f_low = 60.0;   // Hz
  double f_high = 120.0; // Hz
  double base_gain = 0.08;      // mV, at rest phase
  double phase_gain = 0.12;     // mV, added at peak task activity
  double phase_offset = 0.0;    // cycles
  double mvc_gain = 0.6;        // mV, MVC contraction amplitude
};

struct SubjectProfile {
  std::string id = "s01";
  std::array<MuscleProfile, 3> muscles{};  // LD, PD, AD
  double delta_mnf = 0.2;   // fractional spectral compression at FCF = 1
  double gamma_rms = 0.5;   // fractional amplitude growth at FCF = 1
  double drift_jitter = 0.05;   // per-trial relative spread of the drifts
  double amp_jitter = 0.35;     // per-trial relative spread of gamma_rms
  double noise_floor = 0.002;   // mV, white
  std::map<int, double> cycles_to_fatigue{{275, 24.0}, {300, 22.0}};  // keyed by damping
  double borg_sigma = 0.4;

  const MuscleProfile& muscle(Muscle m) const { return muscles[static_cast<int>(m)]; }

  /// Draws a subject deterministically from a seed.
  static SubjectProfile draw(const std::string& id, std::uint64_t seed);
};

/// Per-sample fatigue and activity inputs to the EMG synthesizer.
struct EmgDrive {
  std::vector<double> fcf;    // continuous fatigue fraction per EMG sample
  std::vector<double> phase;  // task cycle phase (cycles elapsed) per EMG sample
  double fs = 2000.0;
};

struct EmgOptions {
  double delta_mnf = 0.2;
  double gamma_rms = 0.5;
  double noise_floor = 0.002;
  bool activity_modulation = true;
  double gain_scale = 1.0;  // 0 leaves only the noise floor
};

/// Shaped-noise EMG: gain(phase) * (1 + gamma * fcf) times unit-variance noise
/// whose band-limited spectrum has both corner frequencies scaled by
/// (1 - delta * fcf), plus a white floor.
RawTrace synth_emg(const EmgDrive& drive, const MuscleProfile& muscle, const EmgOptions& opts,
                   std::uint64_t seed);

/// Expected spectral shape |H(f)|^2 of the EMG envelope at a given fatigue.
double envelope_power(double f, const MuscleProfile& muscle, double scale);

struct TrialOptions {
  double tail_cycles = 0.3;
  TrackerGains gains{};
};

/// Full synthetic trial. Muscle pair: LD+PD for lateral/circular, LD+AD for
/// vertical. Deterministic in `seed`.
Trial synth_trial(const SubjectProfile& profile, const TaskSpec& task, const AdmittanceParams& params,
                  std::uint64_t seed, const TrialOptions& opts = {});

struct DatasetSpec {
  int n_subjects = 1;
  int trials_per_subject = 6;
  std::vector<TaskKind> tasks{TaskKind::Lateral};
  std::uint64_t seed = 7;
  std::array<double, 2> dampings{275.0, 300.0};
};

/// Trials of one subject for one task: the first half at dampings[0], the
/// rest at dampings[1].
std::vector<Trial> synth_subject_trials(const SubjectProfile& profile, TaskKind task, int n_trials,
                                        std::uint64_t seed, const DatasetSpec& spec = {});

/// Generates the dataset in memory, in directory order.
std::vector<Trial> synth_dataset_trials(const DatasetSpec& spec);

/// Writes one directory per trial under `root` plus manifest.tsv; returns the
/// trial directories.
std::vector<std::filesystem::path> synth_dataset(const DatasetSpec& spec, const std::filesystem::path& root);

/// Directory name of a trial inside a dataset root.
std::string trial_dir_name(const Trial& trial);

}  // namespace fcf::synth
