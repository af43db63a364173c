#include "fcf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "fcf/error.hpp"

namespace fcf::synth {
namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double clamp_normal(std::mt19937_64& rng, double mean, double sd, double lo, double hi) {
  std::normal_distribution<double> d(mean, sd);
  return std::clamp(d(rng), lo, hi);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Activity profile over one cycle, peak 1 at `offset`.
double activity(double phase, double offset) {
  return 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * (phase - offset)));
}

struct ShapingPoles {
  double pl = 0.0, ph = 0.0;
  double k = 1.0;  // output gain giving unit variance for unit white input
};

ShapingPoles shaping_poles(const MuscleProfile& m, double scale, double fs) {
  ShapingPoles s;
  s.pl = std::exp(-2.0 * std::numbers::pi * m.f_low * scale / fs);
  s.ph = std::exp(-2.0 * std::numbers::pi * m.f_high * scale / fs);
  // Impulse response energy of (1 - z^-1) / ((1 - pl z^-1)(1 - ph z^-1)^2).
  const double a1 = s.pl + 2.0 * s.ph;
  const double a2 = -(2.0 * s.pl * s.ph + s.ph * s.ph);
  const double a3 = s.pl * s.ph * s.ph;
  double y1 = 0.0, y2 = 0.0, y3 = 0.0, x1 = 0.0;
  double energy = 0.0;
  for (int n = 0; n < 1024; ++n) {
    const double x = n == 0 ? 1.0 : 0.0;
    const double y = x - x1 + a1 * y1 + a2 * y2 + a3 * y3;
    energy += y * y;
    y3 = y2;
    y2 = y1;
    y1 = y;
    x1 = x;
  }
  s.k = 1.0 / std::sqrt(energy);
  return s;
}

std::array<Muscle, 2> task_muscles(TaskKind kind) {
  if (kind == TaskKind::Vertical) return {Muscle::LD, Muscle::AD};
  return {Muscle::LD, Muscle::PD};
}

std::string key_of(double damping) { return std::to_string(static_cast<int>(std::lround(damping))); }

}  // namespace

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(parent) ^ a) ^ (b * 0x9e3779b97f4a7c15ULL));
}

void AdmittanceParams::validate() const {
  if (!(mass > 0.0) || !(damping > 0.0) || !(control_rate > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "admittance mass, damping and rate must be positive");
  }
}

void TaskSpec::validate() const {
  if (!(amplitude > 0.0) || !(frequency > 0.0) || n_cycles < 1 || tail_cycles < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "task needs positive amplitude, frequency and cycle count");
  }
}

TaskSpec TaskSpec::defaults(TaskKind kind, int n_cycles) {
  TaskSpec t;
  t.kind = kind;
  t.amplitude = kind == TaskKind::Circular ? 0.10 : 0.20;
  t.n_cycles = n_cycles;
  return t;
}

double admittance_step(double v, double force, const AdmittanceParams& p) {
  const double alpha = std::exp(-p.damping / (p.mass * p.control_rate));
  return alpha * v + (1.0 - alpha) * force / p.damping;
}

std::vector<double> step_response(const AdmittanceParams& p, double force, double duration_s) {
  p.validate();
  const auto n = static_cast<std::size_t>(std::llround(duration_s * p.control_rate));
  std::vector<double> v(n + 1, 0.0);
  for (std::size_t k = 0; k < n; ++k) v[k + 1] = admittance_step(v[k], force, p);
  return v;
}

MotionTraces simulate_admittance(const TaskSpec& task, const AdmittanceParams& params, const TrackerGains& gains,
                                 std::uint64_t seed) {
  task.validate();
  params.validate();
  const double dt = 1.0 / params.control_rate;
  const double w = 2.0 * std::numbers::pi * task.frequency;
  const double duration = (task.n_cycles + task.tail_cycles) / task.frequency;
  const auto n = static_cast<std::size_t>(std::llround(duration * params.control_rate)) + 1;

  MotionTraces out;
  for (Trace3* tr : {&out.position, &out.velocity, &out.force}) {
    tr->fs = params.control_rate;
    tr->x.resize(n);
    tr->y.resize(n);
    tr->z.resize(n);
  }
  out.phase.resize(n);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, gains.force_noise);

  // Reference position, velocity and acceleration per axis.
  auto reference = [&](double t, int axis, double& r, double& vr, double& ar) {
    const double a = task.amplitude;
    const double s = std::sin(w * t), c = std::cos(w * t);
    r = vr = ar = 0.0;
    switch (task.kind) {
      case TaskKind::Lateral:
        if (axis == 0) { r = a * s; vr = a * w * c; ar = -a * w * w * s; }
        break;
      case TaskKind::Vertical:
        if (axis == 2) { r = a * s; vr = a * w * c; ar = -a * w * w * s; }
        break;
      case TaskKind::Circular:
        if (axis == 0) { r = a * s; vr = a * w * c; ar = -a * w * w * s; }
        if (axis == 1) { r = a - a * c; vr = a * w * s; ar = a * w * w * c; }
        break;
    }
  };

  std::array<double, 3> x{0.0, 0.0, 0.0}, v{0.0, 0.0, 0.0};
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    out.phase[k] = t * task.frequency;
    std::array<double, 3> f{};
    for (int axis = 0; axis < 3; ++axis) {
      double r, vr, ar;
      reference(t, axis, r, vr, ar);
      f[axis] = gains.kp * (r - x[axis]) + gains.kd * (vr - v[axis]) + params.damping * vr +
                params.mass * ar + noise(rng);
    }
    out.position.x[k] = x[0]; out.position.y[k] = x[1]; out.position.z[k] = x[2];
    out.velocity.x[k] = v[0]; out.velocity.y[k] = v[1]; out.velocity.z[k] = v[2];
    out.force.x[k] = f[0]; out.force.y[k] = f[1]; out.force.z[k] = f[2];
    for (int axis = 0; axis < 3; ++axis) {
      // The lateral task has the Y admittance disabled.
      if (task.kind == TaskKind::Lateral && axis == 1) continue;
      const double v_next = admittance_step(v[axis], f[axis], params);
      x[axis] += 0.5 * dt * (v[axis] + v_next);
      v[axis] = v_next;
    }
  }
  return out;
}

double envelope_power(double f, const MuscleProfile& muscle, double scale) {
  const double fl = muscle.f_low * scale, fh = muscle.f_high * scale;
  const double f2 = f * f;
  return fh * fh * fh * fh * f2 / ((f2 + fl * fl) * (f2 + fh * fh) * (f2 + fh * fh));
}

RawTrace synth_emg(const EmgDrive& drive, const MuscleProfile& muscle, const EmgOptions& opts, std::uint64_t seed) {
  if (drive.fcf.size() != drive.phase.size()) {
    throw Error(ErrorCode::LengthMismatch, "fatigue and phase drives differ in length");
  }
  const std::size_t n = drive.fcf.size();
  RawTrace out;
  out.fs = drive.fs;
  out.channel = muscle.muscle;
  out.samples.resize(n);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> white(0.0, 1.0);

  constexpr std::size_t kUpdate = 20;  // coefficient refresh period (samples)
  ShapingPoles poles{};
  double a1 = 0, a2 = 0, a3 = 0;
  double y1 = 0, y2 = 0, y3 = 0, x1 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double fcf = drive.fcf[i];
    if (i % kUpdate == 0) {
      poles = shaping_poles(muscle, 1.0 - opts.delta_mnf * fcf, drive.fs);
      a1 = poles.pl + 2.0 * poles.ph;
      a2 = -(2.0 * poles.pl * poles.ph + poles.ph * poles.ph);
      a3 = poles.pl * poles.ph * poles.ph;
    }
    const double x = white(rng);
    const double y = x - x1 + a1 * y1 + a2 * y2 + a3 * y3;
    y3 = y2;
    y2 = y1;
    y1 = y;
    x1 = x;

    double gain = muscle.base_gain;
    if (opts.activity_modulation) gain += muscle.phase_gain * activity(drive.phase[i], muscle.phase_offset);
    gain *= opts.gain_scale * (1.0 + opts.gamma_rms * fcf);
    out.samples[i] = gain * poles.k * y + opts.noise_floor * white(rng);
  }
  return out;
}

SubjectProfile SubjectProfile::draw(const std::string& id, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SubjectProfile p;
  p.id = id;

  auto& ld = p.muscles[static_cast<int>(Muscle::LD)];
  ld.muscle = Muscle::LD;
  ld.f_low = uniform(rng, 50.0, 70.0);
  ld.f_high = uniform(rng, 110.0, 135.0);
  ld.base_gain = uniform(rng, 0.05, 0.10);
  ld.phase_gain = uniform(rng, 0.08, 0.16);
  ld.phase_offset = 0.25;
  ld.mvc_gain = uniform(rng, 0.5, 0.8);

  auto& pd = p.muscles[static_cast<int>(Muscle::PD)];
  pd.muscle = Muscle::PD;
  pd.f_low = uniform(rng, 50.0, 70.0);
  pd.f_high = uniform(rng, 105.0, 130.0);
  pd.base_gain = uniform(rng, 0.04, 0.09);
  pd.phase_gain = uniform(rng, 0.08, 0.16);
  pd.phase_offset = 0.75;
  pd.mvc_gain = uniform(rng, 0.5, 0.8);

  auto& ad = p.muscles[static_cast<int>(Muscle::AD)];
  ad.muscle = Muscle::AD;
  ad.f_low = uniform(rng, 70.0, 85.0);
  ad.f_high = uniform(rng, 130.0, 150.0);
  ad.base_gain = uniform(rng, 0.06, 0.12);
  ad.phase_gain = uniform(rng, 0.10, 0.20);
  ad.phase_offset = 0.30;
  ad.mvc_gain = uniform(rng, 0.6, 0.9);

  p.delta_mnf = uniform(rng, 0.17, 0.23);
  p.gamma_rms = uniform(rng, 0.40, 0.60);
  const double n275 = clamp_normal(rng, 23.3, 6.9, 12.0, 40.0);
  const double n300 = std::max(10.0, n275 * uniform(rng, 0.85, 1.0));
  p.cycles_to_fatigue = {{275, n275}, {300, n300}};
  return p;
}

Trial synth_trial(const SubjectProfile& profile, const TaskSpec& task, const AdmittanceParams& params,
                  std::uint64_t seed, const TrialOptions& opts) {
  TaskSpec t = task;
  t.tail_cycles = opts.tail_cycles;
  t.validate();
  std::mt19937_64 rng(derive_seed(seed, 1));

  const auto motion = simulate_admittance(t, params, opts.gains, derive_seed(seed, 2));
  const std::size_t n_pos = motion.position.size();
  constexpr double kEmgRate = 2000.0;
  const auto ratio = static_cast<std::size_t>(std::llround(kEmgRate / params.control_rate));
  const std::size_t n_emg = n_pos * ratio;

  const double delta = profile.delta_mnf * std::clamp(1.0 + profile.drift_jitter * std::normal_distribution<double>()(rng), 0.5, 1.5);
  const double gamma = profile.gamma_rms * std::clamp(1.0 + profile.amp_jitter * std::normal_distribution<double>()(rng), 0.1, 2.0);

  EmgDrive drive;
  drive.fs = kEmgRate;
  drive.fcf.resize(n_emg);
  drive.phase.resize(n_emg);
  for (std::size_t i = 0; i < n_emg; ++i) {
    const double time = static_cast<double>(i) / kEmgRate;
    drive.phase[i] = time * t.frequency;
    drive.fcf[i] = drive.phase[i] / t.n_cycles;
  }

  Trial trial;
  trial.position = motion.position;
  trial.force = motion.force;
  trial.meta.subject = profile.id;
  trial.meta.task = t.kind;
  trial.meta.damping = params.damping;
  trial.meta.mass = params.mass;

  const auto muscles = task_muscles(t.kind);
  EmgOptions eo;
  eo.delta_mnf = delta;
  eo.gamma_rms = gamma;
  eo.noise_floor = profile.noise_floor;
  for (int c = 0; c < 2; ++c) {
    const MuscleProfile& mp = profile.muscle(muscles[c]);
    trial.emg[c] = synth_emg(drive, mp, eo, derive_seed(seed, 10 + static_cast<std::uint64_t>(c)));

    // MVC reference: a 3 s unfatigued maximal contraction, band-passed, then
    // the peak 250 ms moving RMS.
    EmgDrive mvc_drive;
    mvc_drive.fs = kEmgRate;
    mvc_drive.fcf.assign(static_cast<std::size_t>(3 * kEmgRate), 0.0);
    mvc_drive.phase.assign(mvc_drive.fcf.size(), 0.0);
    MuscleProfile mvc_profile = mp;
    mvc_profile.base_gain = mp.mvc_gain;
    EmgOptions mo = eo;
    mo.activity_modulation = false;
    const RawTrace mvc_raw = synth_emg(mvc_drive, mvc_profile, mo, derive_seed(seed, 20 + static_cast<std::uint64_t>(c)));
    const auto coeffs = dsp::design_bandpass({5.0, 500.0, 4, kEmgRate});
    const auto filtered = dsp::filter_zero_phase(mvc_raw, coeffs);
    trial.meta.mvc[c] = dsp::mvc_value(filtered.samples, kEmgRate);
  }

  std::vector<int> srf(static_cast<std::size_t>(t.n_cycles));
  std::normal_distribution<double> borg_noise(0.0, profile.borg_sigma);
  for (int k = 1; k <= t.n_cycles; ++k) {
    const double noise = profile.borg_sigma > 0.0 ? borg_noise(rng) : 0.0;
    const double score = std::round(10.0 * static_cast<double>(k) / t.n_cycles + noise);
    srf[k - 1] = static_cast<int>(std::clamp(score, 0.0, 10.0));
  }
  srf.back() = 10;
  trial.srf = std::move(srf);

  TrialTruth truth;
  truth.n_cycles = t.n_cycles;
  for (int k = 0; k <= t.n_cycles; ++k) {
    truth.boundaries.push_back(static_cast<std::size_t>(std::llround(k / t.frequency * params.control_rate)));
  }
  trial.truth = truth;

  trial.meta.extra["seed"] = std::to_string(seed);
  trial.meta.extra["n_cycles"] = std::to_string(t.n_cycles);
  trial.meta.extra["delta_mnf"] = format_double(delta);
  trial.meta.extra["gamma_rms"] = format_double(gamma);
  trial.meta.extra["amplitude"] = format_double(t.amplitude);
  trial.meta.extra["frequency"] = format_double(t.frequency);
  trial.meta.extra["tail_cycles"] = format_double(t.tail_cycles);
  return trial;
}

std::vector<Trial> synth_subject_trials(const SubjectProfile& profile, TaskKind task, int n_trials,
                                        std::uint64_t seed, const DatasetSpec& spec) {
  if (n_trials < 1) throw Error(ErrorCode::InvalidArgument, "trial count must be at least 1");
  std::vector<Trial> out;
  const int first_block = (n_trials + 1) / 2;
  for (int i = 0; i < n_trials; ++i) {
    const double damping = i < first_block ? spec.dampings[0] : spec.dampings[1];
    const std::uint64_t trial_seed = derive_seed(seed, static_cast<std::uint64_t>(task) + 1,
                                                 static_cast<std::uint64_t>(i) + 1);
    std::mt19937_64 rng(derive_seed(trial_seed, 99));
    double base = 23.3;
    if (auto it = profile.cycles_to_fatigue.find(static_cast<int>(std::lround(damping)));
        it != profile.cycles_to_fatigue.end()) {
      base = it->second;
    }
    const int n_cycles = static_cast<int>(std::lround(clamp_normal(rng, base, 1.5, 8.0, 60.0)));
    AdmittanceParams params;
    params.damping = damping;
    Trial t = synth_trial(profile, TaskSpec::defaults(task, n_cycles), params, trial_seed);
    char id[64];
    std::snprintf(id, sizeof(id), "%s_%s_t%02d", profile.id.c_str(), to_string(task).c_str(), i + 1);
    t.meta.trial_id = id;
    t.meta.extra["damping_key"] = key_of(damping);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Trial> synth_dataset_trials(const DatasetSpec& spec) {
  if (spec.n_subjects < 1 || spec.trials_per_subject < 1 || spec.tasks.empty()) {
    throw Error(ErrorCode::InvalidArgument, "dataset needs at least one subject, trial and task");
  }
  std::vector<Trial> out;
  for (int s = 0; s < spec.n_subjects; ++s) {
    char id[16];
    std::snprintf(id, sizeof(id), "s%02d", s + 1);
    const std::uint64_t subject_seed = derive_seed(spec.seed, static_cast<std::uint64_t>(s) + 1);
    const auto profile = SubjectProfile::draw(id, subject_seed);
    for (TaskKind task : spec.tasks) {
      auto trials = synth_subject_trials(profile, task, spec.trials_per_subject, subject_seed, spec);
      for (auto& t : trials) out.push_back(std::move(t));
    }
  }
  return out;
}

std::string trial_dir_name(const Trial& trial) { return trial.meta.trial_id; }

std::vector<fs::path> synth_dataset(const DatasetSpec& spec, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + root.string() + ": " + ec.message());
  std::vector<fs::path> dirs;
  std::string manifest = "trial\tsubject\ttask\tb\tn_cycles\tseed\n";
  for (int s = 0; s < spec.n_subjects; ++s) {
    // Trials are written as they are generated to bound peak memory.
    char id[16];
    std::snprintf(id, sizeof(id), "s%02d", s + 1);
    const std::uint64_t subject_seed = derive_seed(spec.seed, static_cast<std::uint64_t>(s) + 1);
    const auto profile = SubjectProfile::draw(id, subject_seed);
    for (TaskKind task : spec.tasks) {
      for (auto& t : synth_subject_trials(profile, task, spec.trials_per_subject, subject_seed, spec)) {
        const fs::path dir = root / trial_dir_name(t);
        write_trial(t, dir);
        dirs.push_back(dir);
        manifest += t.meta.trial_id + "\t" + t.meta.subject + "\t" + to_string(t.meta.task) + "\t" +
                    format_double(t.meta.damping) + "\t" + std::to_string(t.truth->n_cycles) + "\t" +
                    t.meta.extra["seed"] + "\n";
      }
    }
  }
  std::ofstream out(root / "manifest.tsv", std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write manifest in " + root.string());
  out << manifest;
  if (!out) throw Error(ErrorCode::IoError, "manifest write failed in " + root.string());
  return dirs;
}

}  // namespace fcf::synth
