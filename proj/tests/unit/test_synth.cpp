#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fcf/cycles.hpp"
#include "fcf/error.hpp"
#include "fcf/pipeline.hpp"
#include "fcf/spectral.hpp"
#include "fcf/synth.hpp"

using namespace fcf;
using namespace fcf::synth;
namespace fs = std::filesystem;

namespace {

double measure_mnf(const std::vector<double>& x) {
  const auto psd = spectral::psd_welch(x, 2000.0);
  return spectral::mnf(psd);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("admittance step response") {
  for (double b : {275.0, 300.0}) {
    AdmittanceParams p;
    p.damping = b;
    const auto v = step_response(p, 10.0, 1.0);
    const double vss = 10.0 / b;
    CHECK(v.back() == doctest::Approx(vss).epsilon(1e-3));
    // Exact discretization: each tick equals the closed form.
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double t = static_cast<double>(k) / p.control_rate;
      CHECK(v[k] == doctest::Approx(vss * (1.0 - std::exp(-b * t / p.mass))).epsilon(1e-9).scale(1e-12));
    }
  }
  AdmittanceParams p;
  for (double v : step_response(p, 0.0, 0.5)) CHECK(v == 0.0);
  CHECK(admittance_step(0.0, 0.0, p) == 0.0);
  p.mass = 0.0;
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("admittance tracking of the commanded path") {
  TaskSpec t = TaskSpec::defaults(TaskKind::Lateral, 2);
  AdmittanceParams p;
  const auto m = simulate_admittance(t, p, {}, 3);
  double peak = 0.0, worst_y = 0.0;
  for (std::size_t k = 0; k < m.position.size(); ++k) {
    peak = std::max(peak, std::abs(m.position.x[k]));
    worst_y = std::max(worst_y, std::abs(m.position.y[k]));
  }
  CHECK(peak == doctest::Approx(0.2).epsilon(0.02));
  CHECK(worst_y == 0.0);
}

TEST_CASE("EMG synthesis: planted spectral and amplitude drift") {
  MuscleProfile mp;
  EmgDrive d0, d1;
  const std::size_t n = 2000 * 60;
  d0.fcf.assign(n, 0.0);
  d1.fcf.assign(n, 1.0);
  d0.phase.assign(n, 0.0);
  d1.phase.assign(n, 0.0);
  EmgOptions o;
  o.activity_modulation = false;
  o.noise_floor = 0.0;
  const auto x0 = synth_emg(d0, mp, o, 1).samples;
  const auto x1 = synth_emg(d1, mp, o, 2).samples;
  CHECK(measure_mnf(x1) / measure_mnf(x0) == doctest::Approx(0.8).epsilon(0.05));
  CHECK(dsp::rms(x1) / dsp::rms(x0) == doctest::Approx(1.5).epsilon(0.05));

  o.gain_scale = 0.0;
  o.noise_floor = 0.01;
  const auto floor_only = synth_emg(d0, mp, o, 3).samples;
  CHECK(dsp::rms(floor_only) == doctest::Approx(0.01).epsilon(0.02));
}

TEST_CASE("synthetic trial: determinism, labels and Borg model") {
  const auto profile = SubjectProfile::draw("s01", 5);
  const auto spec = TaskSpec::defaults(TaskKind::Lateral, 12);
  const Trial a = synth_trial(profile, spec, {}, 9);
  const Trial b = synth_trial(profile, spec, {}, 9);
  CHECK(a.emg[0].samples == b.emg[0].samples);
  CHECK(a.position.x == b.position.x);
  CHECK(a.srf == b.srf);
  CHECK(a.truth->n_cycles == 12);
  CHECK(a.truth->boundaries.size() == 13);
  CHECK(a.srf->back() == 10);
  CHECK(a.emg[0].channel == Muscle::LD);
  CHECK(a.emg[1].channel == Muscle::PD);
  CHECK_NOTHROW(a.validate());

  SubjectProfile exact = profile;
  exact.borg_sigma = 0.0;
  const Trial c = synth_trial(exact, spec, {}, 9);
  for (int k = 1; k <= 12; ++k) CHECK((*c.srf)[k - 1] == static_cast<int>(std::round(10.0 * k / 12.0)));

  const Trial v = synth_trial(profile, TaskSpec::defaults(TaskKind::Vertical, 3), {}, 9);
  CHECK(v.emg[0].channel == Muscle::LD);
  CHECK(v.emg[1].channel == Muscle::AD);
}

TEST_CASE("generator and pipeline agree on the fatigue signature") {
  const auto profile = SubjectProfile::draw("s01", 8);
  const Trial t = synth_trial(profile, TaskSpec::defaults(TaskKind::Lateral, 16), {}, 4);
  const auto s = process_trial(t, {.spectrograms = false});
  REQUIRE(s.size() == 16);
  const auto last = s.relative.row(15);
  for (int c = 0; c < 2; ++c) {
    CHECK(last(cycles::CycleFeatureVector::index(c, cycles::Feature::MNF, true)) < 0.0);
    CHECK(last(cycles::CycleFeatureVector::index(c, cycles::Feature::MDF, true)) < 0.0);
    CHECK(last(cycles::CycleFeatureVector::index(c, cycles::Feature::TP, true)) > 0.0);
    CHECK(last(cycles::CycleFeatureVector::index(c, cycles::Feature::RMS, true)) > 0.0);
  }
}

TEST_CASE("dataset writer is byte-deterministic") {
  const fs::path root = fs::temp_directory_path() / "fcf_synth_test";
  fs::remove_all(root);
  DatasetSpec spec;
  spec.trials_per_subject = 2;
  spec.seed = 3;
  const auto dirs = synth_dataset(spec, root / "a");
  synth_dataset(spec, root / "b");
  CHECK(dirs.size() == 2);
  CHECK(slurp(root / "a" / "manifest.tsv") == slurp(root / "b" / "manifest.tsv"));
  for (const auto& d : dirs) {
    for (const char* f : {"emg.csv", "position.csv", "meta.json", "srf.csv"}) {
      CHECK(slurp(d / f) == slurp(root / "b" / d.filename() / f));
    }
  }
  const Trial back = read_trial(dirs.front());
  CHECK(back.meta.trial_id == "s01_lateral_t01");
  CHECK(back.truth.has_value());
  fs::remove_all(root);
}

TEST_CASE("subject profiles") {
  const auto p = SubjectProfile::draw("s02", 1);
  CHECK(p.delta_mnf > 0.0);
  CHECK(p.delta_mnf < 1.0);
  CHECK(p.gamma_rms > 0.0);
  for (const auto& [b, n] : p.cycles_to_fatigue) {
    CHECK(n >= 10.0);
    CHECK(n <= 40.0);
  }
  CHECK(derive_seed(7, 1) != derive_seed(7, 2));
  CHECK(derive_seed(7, 1) == derive_seed(7, 1));
}
