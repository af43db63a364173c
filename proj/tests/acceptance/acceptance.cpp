// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Reports are written under --workdir.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fcf/cycles.hpp"
#include "fcf/dsp.hpp"
#include "fcf/error.hpp"
#include "fcf/eval.hpp"
#include "fcf/models/model.hpp"
#include "fcf/pipeline.hpp"
#include "fcf/report.hpp"
#include "fcf/spectral.hpp"
#include "fcf/synth.hpp"

using namespace fcf;
namespace fs = std::filesystem;

namespace {

struct Options {
  fs::path workdir = "acceptance_run";
  std::uint64_t seed = 7;
  bool cnn = true;
};

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Runner {
 public:
  void run(int id, const std::string& name, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget_s > 0.0 && secs > budget_s) {
      o.pass = false;
      o.detail += " [over time budget " + fmt(budget_s, 0) + " s]";
    }
    failures_ += o.pass ? 0 : 1;
    std::printf("criterion %2d %s  %-28s %8.2f s  %s\n", id, o.pass ? "PASS" : "FAIL", name.c_str(), secs,
                o.detail.c_str());
    std::fflush(stdout);
  }

  int failures() const { return failures_; }

  static std::string fmt(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
  }

 private:
  int failures_ = 0;
};

std::string fmt(double v, int digits = 3) { return Runner::fmt(v, digits); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2e", v);
  return buf;
}

std::vector<double> tone(double freq, double amp, double fs, std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * freq * i / fs);
  return x;
}

double gain_db(const dsp::FilterCoefficients& c, double freq) {
  RawTrace t{tone(freq, 1.0, 2000.0, 20000), 2000.0, Muscle::LD};
  const auto y = dsp::filter_zero_phase(t, c).samples;
  // Central half only, away from the edges.
  std::span<const double> mid(y.data() + 5000, 10000);
  std::span<const double> ref(t.samples.data() + 5000, 10000);
  return 20.0 * std::log10(dsp::rms(mid) / dsp::rms(ref));
}

Outcome dsp_oracles() {
  const auto c = dsp::design_bandpass({});
  const double g100 = gain_db(c, 100.0);
  const double g1 = gain_db(c, 1.0);

  // Two seconds either side of the impulse, so edge transients have died out.
  RawTrace imp{std::vector<double>(8001, 0.0), 2000.0, Muscle::LD};
  imp.samples[4000] = 1.0;
  const auto y = dsp::filter_zero_phase(imp, c).samples;
  double peak = 0.0, asym = 0.0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  for (std::size_t k = 1; k <= 4000; ++k) asym = std::max(asym, std::abs(y[4000 + k] - y[4000 - k]));
  const double rel = asym / peak;

  const bool ok = std::abs(g100) <= 1.0 && g1 <= -20.0 && rel <= 1e-9;
  return {ok, "100 Hz " + fmt(g100) + " dB, 1 Hz " + fmt(g1, 1) + " dB, impulse asymmetry " + sci(rel)};
}

Outcome spectral_oracles() {
  const double fs = 2000.0;
  const double df = fs / 1024.0;
  const auto sine = tone(100.0, 1.0, fs, 20000);
  const auto ps = spectral::psd_welch(sine, fs);
  const double mnf_t = spectral::mnf(ps), mdf_t = spectral::mdf(ps), tp = spectral::total_power(ps);

  std::mt19937_64 rng(11);
  std::normal_distribution<double> N;
  std::vector<double> white(static_cast<std::size_t>(60 * fs));
  for (double& v : white) v = N(rng);
  const auto pw = spectral::psd_welch(white, fs);
  const double mnf_w = spectral::mnf(pw), mdf_w = spectral::mdf(pw);

  const bool ok = std::abs(mnf_t - 100.0) <= df && std::abs(mdf_t - 100.0) <= df &&
                  std::abs(mnf_w - 500.0) <= 10.0 && std::abs(mdf_w - 500.0) <= 10.0 &&
                  std::abs(tp - 0.5) <= 0.01;
  return {ok, "tone MNF " + fmt(mnf_t, 2) + " MDF " + fmt(mdf_t, 2) + " (bin " + fmt(df, 2) + "), white MNF " +
                  fmt(mnf_w, 1) + " MDF " + fmt(mdf_w, 1) + ", sine TP " + fmt(tp, 4)};
}

Outcome spectrogram_shape() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> N;
  std::vector<double> x(20000);
  for (double& v : x) v = N(rng);
  const spectral::StftConfig cfg{};
  const auto s = spectral::stft_spectrogram(x, 2000.0, cfg);
  const bool ok = s.values.rows() == 49 && s.values.cols() == 197;
  return {ok, std::to_string(s.values.cols()) + " frames x " + std::to_string(s.values.rows()) + " bins"};
}

Outcome segmentation(std::uint64_t seed) {
  int checked = 0, wrong = 0;
  std::string first_wrong;
  for (TaskKind kind : {TaskKind::Lateral, TaskKind::Vertical, TaskKind::Circular}) {
    for (int i = 0; i < 10; ++i) {
      const std::uint64_t s = synth::derive_seed(seed, 400 + static_cast<int>(kind), i);
      const auto profile = synth::SubjectProfile::draw("s" + std::to_string(i), s);
      std::mt19937_64 rng(s);
      const int n = std::uniform_int_distribution<int>(8, 30)(rng);
      synth::AdmittanceParams p;
      p.damping = i % 2 ? 300.0 : 275.0;
      const Trial t = synth::synth_trial(profile, synth::TaskSpec::defaults(kind, n), p, s);
      const auto w = cycles::segment_cycles(t);
      ++checked;
      if (static_cast<int>(w.size()) != t.truth->n_cycles) {
        if (wrong++ == 0) {
          first_wrong = to_string(kind) + " #" + std::to_string(i) + " got " + std::to_string(w.size()) +
                        " expected " + std::to_string(t.truth->n_cycles);
        }
      }
    }
  }
  return {wrong == 0, std::to_string(checked - wrong) + "/" + std::to_string(checked) + " exact" +
                          (wrong ? ", first miss: " + first_wrong : "")};
}

Outcome admittance() {
  std::string detail;
  bool ok = true;
  for (double b : {275.0, 300.0}) {
    synth::AdmittanceParams p;
    p.damping = b;
    const double F = 20.0;
    const auto v = synth::step_response(p, F, 2.0);
    const double vss = F / b;
    const double ss_err = std::abs(v.back() - vss) / vss;
    // First crossing of (1 - 1/e) vss, linearly interpolated between ticks.
    const double target = (1.0 - std::exp(-1.0)) * vss;
    double tau = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = 1; k < v.size(); ++k) {
      if (v[k] >= target) {
        const double frac = (target - v[k - 1]) / (v[k] - v[k - 1]);
        tau = (static_cast<double>(k - 1) + frac) / p.control_rate;
        break;
      }
    }
    const double tau_ref = p.mass / b;
    const double tau_err = std::abs(tau - tau_ref) / tau_ref;
    ok = ok && ss_err <= 1e-3 && tau_err <= 0.02;
    detail += "b=" + fmt(b, 0) + ": v_ss err " + fmt(100 * ss_err, 4) + "%, tau " + fmt(tau * 1000, 2) + " ms vs " +
              fmt(tau_ref * 1000, 2) + " ms; ";
  }
  return {ok, detail};
}

double sse_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s;
}

Outcome model_oracles() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> N;
  std::string detail;
  bool ok = true;

  {
    models::TabularDataset d;
    d.X.resize(300, 16);
    for (int i = 0; i < 300; ++i) {
      for (int j = 0; j < 16; ++j) d.X(i, j) = N(rng);
    }
    Eigen::VectorXd w(16);
    for (int j = 0; j < 16; ++j) w(j) = N(rng);
    d.y = (d.X * w).array() + 0.3;
    const auto m = models::train_ols(d);
    const double err = std::max((m.weights - w).cwiseAbs().maxCoeff(), std::abs(m.intercept - 0.3));
    ok = ok && err <= 1e-6;
    detail += "OLS max coef err " + sci(err) + "; ";
  }

  {
    int agree = 0;
    for (int s = 0; s < 50; ++s) {
      const int n = 20 + s % 17, p = 3 + s % 4;
      models::TabularDataset d;
      d.X.resize(n, p);
      d.y.resize(n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) d.X(i, j) = N(rng);
        d.y(i) = N(rng);
      }
      int bf = -1;
      double bt = 0.0, bs = std::numeric_limits<double>::infinity();
      for (int f = 0; f < p; ++f) {
        std::vector<double> xs(d.X.col(f).data(), d.X.col(f).data() + n);
        std::sort(xs.begin(), xs.end());
        for (int i = 0; i + 1 < n; ++i) {
          if (!(xs[i] < xs[i + 1])) continue;
          const double t = 0.5 * (xs[i] + xs[i + 1]);
          std::vector<double> l, r;
          for (int k = 0; k < n; ++k) (d.X(k, f) <= t ? l : r).push_back(d.y(k));
          const double sse = sse_of(l) + sse_of(r);
          if (sse < bs - 1e-12) {
            bs = sse;
            bf = f;
            bt = t;
          }
        }
      }
      std::vector<double> g(d.y.data(), d.y.data() + n), h(n, 1.0);
      std::vector<int> rows(n);
      std::iota(rows.begin(), rows.end(), 0);
      models::TreeParams tp;
      tp.max_depth = 1;
      const auto tree = models::grow_tree(d.X, g, h, rows, tp, models::SplitObjective{});
      const auto& root = tree.nodes().front();
      if (root.feature == bf && std::abs(root.threshold - bt) <= 1e-12 * std::max(1.0, std::abs(bt))) ++agree;
    }
    ok = ok && agree == 50;
    detail += "stump vs brute force " + std::to_string(agree) + "/50; ";
  }

  {
    models::TabularDataset d;
    d.X.resize(150, 16);
    d.y.resize(150);
    for (int i = 0; i < 150; ++i) {
      for (int j = 0; j < 16; ++j) d.X(i, j) = N(rng);
      d.y(i) = std::tanh(d.X(i, 0)) - 0.5 * d.X(i, 3) + 0.1 * N(rng);
    }
    const auto m = models::train_gbt(d);
    int rises = 0;
    for (std::size_t r = 1; r < m.loss_log.size(); ++r) rises += m.loss_log[r] > m.loss_log[r - 1];
    const double w = models::leaf_weight(10.0, 4.0, 0.5, 2.0);
    ok = ok && rises == 0 && m.loss_log.size() == 201 && std::abs(w - (-9.5 / 6.0)) <= 1e-12;
    detail += "GBT loss rises " + std::to_string(rises) + "/" + std::to_string(m.loss_log.size() - 1) +
              ", leaf " + fmt(w, 6) + "; ";
  }

  {
    models::CnnConfig cfg;
    cfg.filters = {2, 2, 2};
    cfg.hidden = {4, 3};
    cfg.seed = 3;
    models::CnnModel m({2, 8, 8}, cfg);
    m.set_precision(models::CnnModel::Precision::Double);
    std::vector<models::CnnInput> xs(4);
    std::vector<double> y;
    for (auto& x : xs) {
      x = {2, 8, 8, std::vector<double>(128)};
      for (double& v : x.data) v = N(rng);
      y.push_back(0.5 + 0.2 * N(rng));
    }
    std::vector<const models::CnnInput*> b;
    for (auto& x : xs) b.push_back(&x);
    m.zero_gradients();
    m.loss_and_gradient(b, y, false, 0);
    std::vector<double> g(m.parameter_count());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = m.gradient(i);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double& p = m.parameter(i);
      const double p0 = p, e = 1e-4;
      p = p0 + e;
      const double lp = m.loss_and_gradient(b, y, false, 0);
      p = p0 - e;
      const double lm = m.loss_and_gradient(b, y, false, 0);
      p = p0;
      const double fd = (lp - lm) / (2.0 * e);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max(1e-6, std::abs(fd) + std::abs(g[i])));
    }
    ok = ok && worst <= 1e-3;
    detail += "CNN grad check max rel err " + sci(worst) + " over " + std::to_string(g.size()) +
              " params";
  }
  return {ok, detail};
}

struct Data {
  std::map<TaskKind, std::vector<TrialSamples>> by_task;
};

Data make_data(std::uint64_t seed, bool spectrograms) {
  synth::DatasetSpec spec;
  spec.n_subjects = 1;
  spec.trials_per_subject = 6;
  spec.seed = seed;
  spec.tasks = {TaskKind::Lateral, TaskKind::Vertical, TaskKind::Circular};
  Data d;
  for (const auto& t : synth::synth_dataset_trials(spec)) {
    PipelineConfig pc;
    pc.spectrograms = spectrograms && t.meta.task == TaskKind::Lateral;
    d.by_task[t.meta.task].push_back(process_trial(t, pc));
  }
  return d;
}

eval::EvalConfig family_config(models::Family f, std::uint64_t seed) {
  eval::EvalConfig cfg;
  cfg.train.family = f;
  cfg.seed = seed;
  return cfg;
}

void save(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) {
      opt.workdir = argv[++i];
    } else if (a == "--seed" && i + 1 < argc) {
      opt.seed = std::stoull(argv[++i]);
    } else if (a == "--no-cnn") {
      opt.cnn = false;
    } else {
      std::cerr << "usage: fcf_acceptance [--workdir DIR] [--seed N] [--no-cnn]\n";
      return 2;
    }
  }
  fs::create_directories(opt.workdir);
  std::printf("acceptance seed %llu, reports in %s\n", static_cast<unsigned long long>(opt.seed),
              opt.workdir.string().c_str());

  Runner R;
  R.run(1, "DSP oracles", 1.0, dsp_oracles);
  R.run(2, "spectral oracles", 5.0, spectral_oracles);
  R.run(3, "spectrogram shape", 1.0, spectrogram_shape);
  R.run(4, "segmentation exactness", 30.0, [&] { return segmentation(opt.seed); });
  R.run(5, "admittance fidelity", 1.0, admittance);
  R.run(6, "model oracles", 120.0, model_oracles);

  Data data;
  std::map<std::string, eval::EvalReport> reports;
  std::map<std::string, std::string> written;
  auto keep = [&](const std::string& name, const eval::EvalReport& r) {
    reports[name] = r;
    written[name] = report::to_json(r);
    save(opt.workdir / (name + ".json"), written[name]);
  };

  double tree_seconds = 0.0;
  R.run(7, "LOTO end to end", opt.cnn ? 1200.0 : 300.0, [&] {
    const auto t0 = std::chrono::steady_clock::now();
    data = make_data(opt.seed, opt.cnn);
    const auto& lateral = data.by_task.at(TaskKind::Lateral);
    std::string detail;
    bool ok = lateral.size() == 6;
    for (auto f : {models::Family::Linear, models::Family::Forest, models::Family::Gbt}) {
      const auto r = eval::loto_cv(lateral, family_config(f, opt.seed));
      keep("loto_" + models::to_string(f), r);
      const double limit = f == models::Family::Linear ? 30.0 : 15.0;
      ok = ok && r.folds.size() == 6 && r.mean_rmse <= limit;
      detail += models::to_string(f) + " " + fmt(r.mean_rmse, 2) + "+-" + fmt(r.std_rmse, 2) + " ";
    }
    tree_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ok = ok && tree_seconds < 300.0;
    if (opt.cnn) {
      const auto r = eval::loto_cv(lateral, family_config(models::Family::Cnn, opt.seed));
      keep("loto_cnn", r);
      ok = ok && r.folds.size() == 6 && r.mean_rmse <= 30.0;
      detail += "cnn " + fmt(r.mean_rmse, 2) + "+-" + fmt(r.std_rmse, 2) + " ";
    } else {
      ok = false;
      detail += "cnn skipped (--no-cnn) ";
    }
    detail += "(without CNN " + fmt(tree_seconds, 1) + " s)";
    return Outcome{ok, detail};
  });

  R.run(8, "feature importance", 0.0, [&] {
    std::string detail;
    bool ok = true;
    for (const char* name : {"loto_forest", "loto_gbt"}) {
      const auto it = reports.find(name);
      if (it == reports.end() || !it->second.importance) return Outcome{false, std::string(name) + " missing"};
      const auto& imp = *it->second.importance;
      const int top = static_cast<int>(std::max_element(imp.begin(), imp.end()) - imp.begin());
      ok = ok && top == 0;
      detail += std::string(name + 5) + " MNF " + fmt(imp[0], 3) + " MDF " + fmt(imp[1], 3) + " TP " +
                fmt(imp[2], 3) + " RMS " + fmt(imp[3], 3) + "; ";
    }
    return Outcome{ok, detail};
  });

  R.run(9, "SRF vs FCF", 60.0, [&] {
    synth::DatasetSpec spec;
    spec.n_subjects = 10;
    spec.trials_per_subject = 6;
    spec.seed = opt.seed;
    std::vector<TrialSamples> trials;
    PipelineConfig pc;
    pc.spectrograms = false;
    for (const auto& t : synth::synth_dataset_trials(spec)) trials.push_back(process_trial(t, pc));
    const auto c = eval::srf_fcf_correlation(trials);
    save(opt.workdir / "srf_fcf.json", report::to_json(c));
    written["srf_fcf"] = report::to_json(c);
    return Outcome{c.pooled.r2 >= 0.95, "pooled R2 " + fmt(c.pooled.r2, 4) + " over " +
                                            std::to_string(c.pooled.n) + " cycles, slope " +
                                            fmt(c.pooled.slope, 3)};
  });

  R.run(10, "cross-task robustness", 300.0, [&] {
    const auto& lateral = data.by_task.at(TaskKind::Lateral);
    const double base = reports.at("loto_forest").mean_rmse;
    std::string detail = "lateral LOTO " + fmt(base, 2) + "; ";
    bool ok = true;
    for (auto f : {models::Family::Forest, models::Family::Linear}) {
      const auto cfg = family_config(f, opt.seed);
      const auto model = models::train_model(lateral, eval::seeded(cfg.train, opt.seed));
      for (TaskKind k : {TaskKind::Vertical, TaskKind::Circular}) {
        const auto r = eval::cross_task_eval(model, lateral, data.by_task.at(k), cfg);
        const std::string name = "cross_" + models::to_string(f) + "_" + to_string(k);
        keep(name, r);
        if (f == models::Family::Forest) {
          ok = ok && r.folds.size() == 6 && r.mean_rmse - base <= 10.0;
          detail += "forest->" + to_string(k) + " " + fmt(r.mean_rmse, 2) + "; ";
        } else {
          // The reported RMSE must be the unclipped one.
          double mean = 0.0;
          for (const auto& fold : r.folds) mean += eval::rmse(fold.raw, fold.truth);
          mean /= static_cast<double>(r.folds.size());
          ok = ok && std::abs(mean - r.mean_rmse) <= 1e-9 * std::max(1.0, mean);
          detail += "linear->" + to_string(k) + " " + fmt(r.mean_rmse, 2) + " raw (" + fmt(r.mean_rmse_clamped, 2) +
                    " clamped); ";
        }
      }
    }
    return Outcome{ok, detail};
  });

  R.run(11, "determinism", 0.0, [&] {
    const Data again = make_data(opt.seed, false);
    const auto& lateral = again.by_task.at(TaskKind::Lateral);
    int same = 0, total = 0;
    std::string diff;
    auto compare = [&](const std::string& name, const std::string& text) {
      ++total;
      if (written.count(name) && written.at(name) == text && read_all(opt.workdir / (name + ".json")) == text) {
        ++same;
      } else if (diff.empty()) {
        diff = name;
      }
    };
    for (auto f : {models::Family::Linear, models::Family::Forest, models::Family::Gbt}) {
      compare("loto_" + models::to_string(f),
              report::to_json(eval::loto_cv(lateral, family_config(f, opt.seed))));
    }
    for (auto f : {models::Family::Forest, models::Family::Linear}) {
      const auto cfg = family_config(f, opt.seed);
      const auto model = models::train_model(lateral, eval::seeded(cfg.train, opt.seed));
      for (TaskKind k : {TaskKind::Vertical, TaskKind::Circular}) {
        compare("cross_" + models::to_string(f) + "_" + to_string(k),
                report::to_json(eval::cross_task_eval(model, lateral, again.by_task.at(k), cfg)));
      }
    }
    std::string detail;
    if (opt.cnn && reports.count("loto_cnn")) {
      // One full CNN fold retrained from scratch must reproduce its outputs bit for bit.
      const auto& first = reports.at("loto_cnn").folds.front();
      std::vector<TrialSamples> with_spec;
      PipelineConfig pc;
      synth::DatasetSpec spec;
      spec.trials_per_subject = 6;
      spec.seed = opt.seed;
      for (const auto& t : synth::synth_dataset_trials(spec)) with_spec.push_back(process_trial(t, pc));
      std::vector<TrialSamples> train;
      const TrialSamples* held = nullptr;
      for (const auto& t : with_spec) {
        if (t.trial_id == first.trial_id) held = &t;
        else train.push_back(t);
      }
      std::sort(train.begin(), train.end(), [](const auto& a, const auto& b) { return a.trial_id < b.trial_id; });
      const auto cfg = family_config(models::Family::Cnn, opt.seed);
      const auto model = models::train_model(train, eval::seeded(cfg.train, first.seed));
      ++total;
      if (held && models::predict_trial(model, *held) == first.raw) ++same;
      else if (diff.empty()) diff = "cnn fold " + first.trial_id;
      detail = " (incl. CNN fold " + first.trial_id + " retrained)";
    }
    return Outcome{same == total, std::to_string(same) + "/" + std::to_string(total) + " reports byte-identical" +
                                      detail + (diff.empty() ? "" : ", first difference: " + diff)};
  });

  std::printf("%d of 11 criteria failed\n", R.failures());
  return R.failures() == 0 ? 0 : 1;
}
