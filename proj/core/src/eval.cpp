#include "fcf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <set>

#include "fcf/error.hpp"
#include "fcf/synth.hpp"

namespace fcf::eval {

double rmse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw Error(ErrorCode::LengthMismatch, "rmse needs equal, non-empty inputs");
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) ss += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return 100.0 * std::sqrt(ss / static_cast<double>(pred.size()));
}

double r_squared(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw Error(ErrorCode::LengthMismatch, "r_squared needs equal, non-empty inputs");
  }
  const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
  double ss_tot = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
  }
  if (!(ss_tot > 0.0)) throw Error(ErrorCode::ZeroVariance, "truth has zero variance");
  return 1.0 - ss_res / ss_tot;
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

void EvalReport::aggregate() {
  std::vector<double> r, rc, r2;
  clamp_count = 0;
  for (const auto& f : folds) {
    r.push_back(f.rmse);
    rc.push_back(f.rmse_clamped);
    if (f.r2) r2.push_back(*f.r2);
    clamp_count += f.clamped;
  }
  const auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  mean_rmse = mean(r);
  std_rmse = sample_std(r);
  mean_rmse_clamped = mean(rc);
  mean_r2 = r2.empty() ? std::nullopt : std::optional<double>(mean(r2));
  failed_to_regress = mean_rmse > 100.0;
}

FoldResult make_fold(const TrialSamples& trial, std::vector<double> raw, std::uint64_t seed) {
  if (raw.size() != trial.fcf.size()) throw Error(ErrorCode::LengthMismatch, "one prediction per cycle expected");
  FoldResult f;
  f.trial_id = trial.trial_id;
  f.task = to_string(trial.task);
  f.truth = trial.fcf;
  f.raw = std::move(raw);
  f.seed = seed;
  for (std::size_t k = 0; k < trial.size(); ++k) {
    f.cycles.push_back(k < trial.raw.size() ? trial.raw[k].cycle : static_cast<int>(k) + 1);
  }
  std::vector<double> clamped;
  for (double v : f.raw) {
    const auto p = models::clamp_prediction(v);
    clamped.push_back(p.value);
    f.clamped += p.clamped ? 1 : 0;
  }
  f.rmse = rmse(f.raw, f.truth);
  f.rmse_clamped = rmse(clamped, f.truth);
  try {
    f.r2 = r_squared(f.raw, f.truth);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ZeroVariance) throw;
  }
  return f;
}

std::uint64_t fold_seed(std::uint64_t seed, const std::string& trial_id) {
  // FNV-1a keeps the seed tied to the trial, not its position.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : trial_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return synth::derive_seed(seed, h);
}

models::TrainConfig seeded(models::TrainConfig cfg, std::uint64_t seed) {
  cfg.forest.seed = synth::derive_seed(seed, 1);
  cfg.cnn.seed = synth::derive_seed(seed, 2);
  return cfg;
}

std::map<std::string, std::string> config_echo(const models::TrainConfig& cfg) {
  std::map<std::string, std::string> c;
  c["family"] = models::to_string(cfg.family);
  c["features"] = cfg.features == models::FeatureMode::Relative ? "relative" : "raw";
  switch (cfg.family) {
    case models::Family::Linear:
      break;
    case models::Family::Forest:
      c["forest.n_trees"] = std::to_string(cfg.forest.n_trees);
      c["forest.max_depth"] = std::to_string(cfg.forest.max_depth);
      c["forest.max_features"] = std::to_string(cfg.forest.max_features);
      c["forest.bootstrap"] = cfg.forest.bootstrap ? "true" : "false";
      break;
    case models::Family::Gbt:
      c["gbt.rounds"] = std::to_string(cfg.gbt.rounds);
      c["gbt.max_depth"] = std::to_string(cfg.gbt.max_depth);
      c["gbt.learning_rate"] = format_double(cfg.gbt.learning_rate);
      c["gbt.alpha"] = format_double(cfg.gbt.alpha);
      c["gbt.lambda"] = format_double(cfg.gbt.lambda);
      break;
    case models::Family::Cnn:
      c["cnn.learning_rate"] = format_double(cfg.cnn.learning_rate);
      c["cnn.batch_size"] = std::to_string(cfg.cnn.batch_size);
      c["cnn.patience"] = std::to_string(cfg.cnn.patience);
      c["cnn.max_epochs"] = std::to_string(cfg.cnn.max_epochs);
      c["cnn.dropout"] = format_double(cfg.cnn.dropout);
      c["cnn.val_fraction"] = format_double(cfg.cnn.val_fraction);
      c["cnn.per_bin_norm"] = cfg.per_bin_norm ? "true" : "false";
      break;
  }
  return c;
}

namespace {

std::vector<TrialSamples> sorted_except(std::span<const TrialSamples> trials, std::size_t skip) {
  std::vector<TrialSamples> out;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (i != skip) out.push_back(trials[i]);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.trial_id < b.trial_id; });
  return out;
}

void check_subject_and_ids(std::span<const TrialSamples> trials) {
  if (trials.size() < 2) throw Error(ErrorCode::TooFewTrials, "leave-one-trial-out needs at least 2 trials");
  std::set<std::string> ids, subjects;
  for (const auto& t : trials) {
    if (!ids.insert(t.trial_id).second) throw Error(ErrorCode::InvalidArgument, "duplicate trial id " + t.trial_id);
    subjects.insert(t.subject);
  }
  if (subjects.size() > 1) {
    throw Error(ErrorCode::InvalidArgument, "leave-one-trial-out is subject-specific; got several subjects");
  }
}

std::vector<double> totals_of(const models::Model& m) {
  if (const auto* f = std::get_if<models::ForestModel>(&m)) return f->impurity_decrease;
  if (const auto* g = std::get_if<models::GbtModel>(&m)) return g->gain;
  return {};
}

}  // namespace

EvalReport loto_cv(std::span<const TrialSamples> trials, const Trainer& trainer, const std::string& family,
                   std::uint64_t seed) {
  check_subject_and_ids(trials);
  std::vector<std::size_t> order(trials.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return trials[a].trial_id < trials[b].trial_id; });

  EvalReport report;
  report.mode = "loto";
  report.family = family;
  report.subject = trials.front().subject;
  report.train_task = report.test_task = to_string(trials.front().task);
  report.seeds["master"] = seed;

  std::array<double, 4> family_sum{};
  std::vector<double> feature_sum;
  int with_importance = 0;
  for (std::size_t i : order) {
    const auto& held = trials[i];
    const auto train = sorted_except(trials, i);
    const std::uint64_t fs = fold_seed(seed, held.trial_id);
    FoldModel fm = trainer(train, fs);
    report.folds.push_back(make_fold(held, fm.predict(held), fs));
    report.seeds["fold." + held.trial_id] = fs;
    if (fm.importance_totals && !fm.importance_totals->empty()) {
      const auto fi = models::feature_importance_from(*fm.importance_totals);
      for (int k = 0; k < 4; ++k) family_sum[k] += fi.family[k];
      if (feature_sum.empty()) feature_sum.assign(fi.per_feature.size(), 0.0);
      for (std::size_t j = 0; j < fi.per_feature.size(); ++j) feature_sum[j] += fi.per_feature[j];
      ++with_importance;
    }
  }
  if (with_importance > 0) {
    for (double& v : family_sum) v /= with_importance;
    for (double& v : feature_sum) v /= with_importance;
    report.importance = family_sum;
    report.feature_importance = feature_sum;
  }
  report.aggregate();
  return report;
}

EvalReport loto_cv(std::span<const TrialSamples> trials, const EvalConfig& cfg) {
  const models::FeatureMode mode = cfg.train.features;
  std::set<std::string> all;
  for (const auto& t : trials) all.insert(t.trial_id);
  Trainer trainer = [&](std::span<const TrialSamples> train, std::uint64_t seed) {
    auto model = std::make_shared<models::Model>(models::train_model(train, seeded(cfg.train, seed)));
    if (cfg.inspect) {
      std::set<std::string> held = all;
      for (const auto& t : train) held.erase(t.trial_id);
      cfg.inspect(held.empty() ? std::string() : *held.begin(), *model);
    }
    FoldModel fm;
    fm.predict = [model, mode](const TrialSamples& t) { return models::predict_trial(*model, t, mode); };
    auto totals = totals_of(*model);
    if (!totals.empty()) fm.importance_totals = std::move(totals);
    return fm;
  };
  EvalReport r = loto_cv(trials, trainer, models::to_string(cfg.train.family), cfg.seed);
  r.config = config_echo(cfg.train);
  return r;
}

EvalReport cross_task_eval(const models::Model& model, std::span<const TrialSamples> train,
                           std::span<const TrialSamples> test, const EvalConfig& cfg) {
  if (train.empty() || test.empty()) throw Error(ErrorCode::TooFewTrials, "cross-task evaluation needs trials on both sides");
  const auto& ref = train.front();
  const std::size_t ref_channels = ref.channels.size();
  EvalReport report;
  report.mode = "cross";
  report.family = models::to_string(models::family_of(model));
  report.subject = ref.subject;
  report.train_task = to_string(ref.task);
  report.test_task = to_string(test.front().task);
  report.config = config_echo(cfg.train);
  report.config["family"] = report.family;
  report.seeds["master"] = cfg.seed;

  std::vector<std::size_t> order(test.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return test[a].trial_id < test[b].trial_id; });

  std::set<std::string> mappings;
  for (std::size_t i : order) {
    const auto& t = test[i];
    const bool spectro_mismatch =
        !t.spectrograms.empty() && !ref.spectrograms.empty() && t.spectrograms[0][0].rows() != ref.spectrograms[0][0].rows();
    if (t.channels.size() != ref_channels || (t.size() > 0 && t.relative.cols() != ref.relative.cols()) ||
        spectro_mismatch) {
      throw Error(ErrorCode::ChannelMismatch, "trial " + t.trial_id + " does not match the training channel layout");
    }
    for (std::size_t c = 0; c < ref_channels; ++c) {
      if (t.channels[c] != ref.channels[c]) {
        mappings.insert("channel " + std::to_string(c + 1) + ": " + to_string(ref.channels[c]) + " -> " +
                        to_string(t.channels[c]));
      }
    }
    report.folds.push_back(make_fold(t, models::predict_trial(model, t, cfg.train.features), cfg.seed));
  }
  for (const auto& m : mappings) report.notes.push_back("muscle mapping " + m);
  report.aggregate();
  if (report.failed_to_regress) {
    report.notes.push_back("failed to regress: mean RMSE above 100%");
  }
  return report;
}

namespace {

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(syy > 0.0)) throw Error(ErrorCode::ZeroVariance, "SRF is constant");
  if (!(sxx > 0.0)) throw Error(ErrorCode::ZeroVariance, "FCF is constant");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = (sxy * sxy) / (sxx * syy);
  f.n = x.size();
  return f;
}

}  // namespace

SrfCorrelation srf_fcf_correlation(std::span<const TrialSamples> trials) {
  if (trials.empty()) throw Error(ErrorCode::MissingSrf, "no trials given");
  SrfCorrelation out;
  std::vector<double> px, py;
  for (const auto& t : trials) {
    if (!t.srf_percent) throw Error(ErrorCode::MissingSrf, "trial " + t.trial_id + " has no SRF labels");
    std::vector<double> x, y;
    for (std::size_t k = 0; k < t.size(); ++k) {
      x.push_back(100.0 * t.fcf[k]);
      y.push_back((*t.srf_percent)[k]);
    }
    px.insert(px.end(), x.begin(), x.end());
    py.insert(py.end(), y.begin(), y.end());
    out.per_trial.emplace_back(t.trial_id, fit_line(x, y));
  }
  out.pooled = fit_line(px, py);
  return out;
}

}  // namespace fcf::eval
