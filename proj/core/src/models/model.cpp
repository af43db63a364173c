#include "fcf/models/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fcf/cycles.hpp"
#include "fcf/error.hpp"
#include "fcf/pipeline.hpp"

namespace fcf::models {

using nlohmann::json;

namespace {

constexpr int kModelFormat = 1;

void require_tabular_width(const TrialSamples& trial, Eigen::Index expected) {
  if (trial.relative.cols() != expected && trial.size() > 0) {
    throw Error(ErrorCode::ShapeMismatch, "trial " + trial.trial_id + " has " + std::to_string(trial.relative.cols()) +
                                              " features, model expects " + std::to_string(expected));
  }
}

Eigen::RowVectorXd row_of(const TrialSamples& t, std::size_t k, FeatureMode mode) {
  Eigen::RowVectorXd x(cycles::kVectorSize);
  for (int j = 0; j < cycles::kVectorSize; ++j) {
    x(j) = mode == FeatureMode::Relative ? t.relative(static_cast<Eigen::Index>(k), j) : t.raw[k].values[j];
  }
  return x;
}

json tree_to_json(const RegressionTree& t) {
  json nodes = json::array();
  for (const auto& n : t.nodes()) {
    nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right},
                     {"value", n.value}, {"gain", n.gain}, {"count", n.count}});
  }
  return nodes;
}

RegressionTree tree_from_json(const json& j) {
  std::vector<TreeNode> nodes;
  for (const auto& n : j) {
    TreeNode t;
    t.feature = n.at("feature").get<int>();
    t.threshold = n.at("threshold").get<double>();
    t.left = n.at("left").get<int>();
    t.right = n.at("right").get<int>();
    t.value = n.at("value").get<double>();
    t.gain = n.at("gain").get<double>();
    t.count = n.at("count").get<int>();
    nodes.push_back(t);
  }
  const int size = static_cast<int>(nodes.size());
  for (const auto& n : nodes) {
    if (n.feature >= 0 && (n.left < 0 || n.left >= size || n.right < 0 || n.right >= size)) {
      throw Error(ErrorCode::IoError, "tree node references a missing child");
    }
  }
  return RegressionTree(std::move(nodes));
}

json stats_to_json(const spectral::NormStats& s) {
  return {{"per_bin", s.per_bin}, {"mean", s.mean}, {"stddev", s.stddev}};
}

spectral::NormStats stats_from_json(const json& j) {
  spectral::NormStats s;
  s.per_bin = j.at("per_bin").get<bool>();
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("stddev").get<std::vector<double>>();
  return s;
}

}  // namespace

std::string to_string(Family f) {
  switch (f) {
    case Family::Linear: return "linear";
    case Family::Forest: return "forest";
    case Family::Gbt: return "gbt";
    case Family::Cnn: return "cnn";
  }
  return "unknown";
}

Family family_from_string(const std::string& s) {
  if (s == "linear") return Family::Linear;
  if (s == "forest") return Family::Forest;
  if (s == "gbt") return Family::Gbt;
  if (s == "cnn") return Family::Cnn;
  throw Error(ErrorCode::InvalidArgument, "unknown model family '" + s + "'");
}

Prediction clamp_prediction(double raw) {
  Prediction p;
  p.raw = raw;
  p.value = std::clamp(raw, 0.0, 1.0);
  p.clamped = p.value != raw;
  return p;
}

Family family_of(const Model& m) { return static_cast<Family>(m.index()); }

std::vector<CnnInput> cnn_inputs(const TrialSamples& trial, const spectral::NormStats& stats, std::size_t frames) {
  if (trial.spectrograms.size() != trial.size()) {
    throw Error(ErrorCode::ShapeMismatch, "trial " + trial.trial_id + " has no spectrogram for every cycle");
  }
  std::vector<CnnInput> out;
  out.reserve(trial.size());
  for (const auto& spec : trial.spectrograms) {
    CnnInput in;
    in.channels = static_cast<int>(spec.size());
    in.height = static_cast<int>(spec[0].rows());
    in.width = static_cast<int>(frames);
    in.data.reserve(static_cast<std::size_t>(in.channels) * in.height * in.width);
    for (const auto& ch : spec) {
      if (ch.rows() != in.height) throw Error(ErrorCode::ShapeMismatch, "channel spectrograms disagree in bins");
      const Eigen::MatrixXd z = spectral::log_zscore(spectral::fit_frames(ch, frames), stats);
      for (Eigen::Index r = 0; r < z.rows(); ++r) {
        for (Eigen::Index c = 0; c < z.cols(); ++c) in.data.push_back(z(r, c));
      }
    }
    out.push_back(std::move(in));
  }
  return out;
}

Model train_model(std::span<const TrialSamples> trials, const TrainConfig& cfg) {
  if (trials.empty()) throw Error(ErrorCode::EmptyData, "no training trials");
  switch (cfg.family) {
    case Family::Linear: return train_ols(make_dataset(trials, cfg.features));
    case Family::Forest: return train_random_forest(make_dataset(trials, cfg.features), cfg.forest);
    case Family::Gbt: return train_gbt(make_dataset(trials, cfg.features), cfg.gbt);
    case Family::Cnn: break;
  }

  std::vector<Eigen::MatrixXd> raw;
  for (const auto& t : trials) {
    if (t.spectrograms.size() != t.size()) {
      throw Error(ErrorCode::ShapeMismatch, "trial " + t.trial_id + " lacks spectrograms");
    }
    for (const auto& spec : t.spectrograms) {
      for (const auto& ch : spec) raw.push_back(ch);
    }
  }
  CnnBundle bundle;
  bundle.frames = trials.front().spectrograms.empty() ? 197 : static_cast<std::size_t>(trials.front().spectrograms[0][0].cols());
  bundle.stats = spectral::fit_norm_stats(raw, cfg.per_bin_norm);
  raw.clear();

  std::vector<CnnInput> inputs;
  std::vector<double> labels;
  std::vector<std::string> groups;
  for (const auto& t : trials) {
    auto in = cnn_inputs(t, bundle.stats, bundle.frames);
    for (std::size_t k = 0; k < in.size(); ++k) {
      inputs.push_back(std::move(in[k]));
      labels.push_back(t.fcf[k]);
      groups.push_back(t.trial_id);
    }
  }
  bundle.model = train_cnn(inputs, labels, cfg.cnn, &groups);
  return bundle;
}

std::vector<double> predict_trial(const Model& m, const TrialSamples& trial, FeatureMode features) {
  std::vector<double> out;
  out.reserve(trial.size());
  if (const auto* cnn = std::get_if<CnnBundle>(&m)) {
    const auto inputs = cnn_inputs(trial, cnn->stats, cnn->frames);
    std::vector<const CnnInput*> batch;
    for (const auto& in : inputs) batch.push_back(&in);
    if (batch.empty()) return out;
    return cnn->model.predict_batch(batch);
  }
  require_tabular_width(trial, cycles::kVectorSize);
  for (std::size_t k = 0; k < trial.size(); ++k) {
    const Eigen::RowVectorXd x = row_of(trial, k, features);
    out.push_back(std::visit(
        [&](const auto& model) -> double {
          using T = std::decay_t<decltype(model)>;
          if constexpr (std::is_same_v<T, LinearModel>) {
            if (model.weights.size() != x.size()) throw Error(ErrorCode::ShapeMismatch, "linear model width differs");
          }
          if constexpr (std::is_same_v<T, CnnBundle>) {
            return 0.0;
          } else {
            return model.predict_raw(x);
          }
        },
        m));
  }
  return out;
}

FeatureImportance feature_importance_from(std::span<const double> totals) {
  const double sum = std::accumulate(totals.begin(), totals.end(), 0.0);
  if (!(sum > 0.0)) throw Error(ErrorCode::Untrained, "model has no split statistics");
  FeatureImportance fi;
  fi.per_feature.resize(totals.size());
  for (std::size_t j = 0; j < totals.size(); ++j) {
    fi.per_feature[j] = totals[j] / sum;
    fi.family[static_cast<int>(cycles::feature_family(static_cast<int>(j)))] += fi.per_feature[j];
  }
  std::iota(fi.ranking.begin(), fi.ranking.end(), 0);
  std::stable_sort(fi.ranking.begin(), fi.ranking.end(), [&](int a, int b) { return fi.family[a] > fi.family[b]; });
  return fi;
}

FeatureImportance feature_importance(const Model& m) {
  if (const auto* f = std::get_if<ForestModel>(&m)) {
    if (f->trees.empty()) throw Error(ErrorCode::Untrained, "forest has no trees");
    return feature_importance_from(f->impurity_decrease);
  }
  if (const auto* g = std::get_if<GbtModel>(&m)) {
    if (g->trees.empty() && g->gain.empty()) throw Error(ErrorCode::Untrained, "booster has no trees");
    return feature_importance_from(g->gain);
  }
  throw Error(ErrorCode::InvalidArgument, "feature importance needs a forest or gbt model");
}

void save_model(const Model& m, const std::filesystem::path& path) {
  if (const auto* cnn = std::get_if<CnnBundle>(&m)) {
    cnn->model.save(path);
    std::ofstream side(path.string() + ".norm.json");
    if (!side) throw Error(ErrorCode::IoError, "cannot write " + path.string() + ".norm.json");
    side << json{{"format", kModelFormat}, {"frames", cnn->frames}, {"stats", stats_to_json(cnn->stats)}}.dump(2) << '\n';
    return;
  }
  json j{{"format", kModelFormat}, {"family", to_string(family_of(m))}};
  if (const auto* lin = std::get_if<LinearModel>(&m)) {
    j["weights"] = std::vector<double>(lin->weights.data(), lin->weights.data() + lin->weights.size());
    j["intercept"] = lin->intercept;
    j["jittered"] = lin->jittered;
  } else if (const auto* f = std::get_if<ForestModel>(&m)) {
    j["config"] = {{"n_trees", f->config.n_trees}, {"max_depth", f->config.max_depth},
                   {"max_features", f->config.max_features}, {"bootstrap", f->config.bootstrap},
                   {"seed", f->config.seed}};
    j["tree_seeds"] = f->tree_seeds;
    j["impurity_decrease"] = f->impurity_decrease;
    json trees = json::array();
    for (const auto& t : f->trees) trees.push_back(tree_to_json(t));
    j["trees"] = std::move(trees);
  } else if (const auto* g = std::get_if<GbtModel>(&m)) {
    j["config"] = {{"rounds", g->config.rounds}, {"max_depth", g->config.max_depth},
                   {"learning_rate", g->config.learning_rate}, {"alpha", g->config.alpha},
                   {"lambda", g->config.lambda}};
    j["base_score"] = g->base_score;
    j["loss_log"] = g->loss_log;
    j["gain"] = g->gain;
    json trees = json::array();
    for (const auto& t : g->trees) trees.push_back(tree_to_json(t));
    j["trees"] = std::move(trees);
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << j.dump() << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  char magic[8] = {};
  in.read(magic, 8);
  if (in.gcount() == 8 && std::memcmp(magic, "FCFCNN01", 8) == 0) {
    in.close();
    CnnBundle b;
    b.model = CnnModel::load(path);
    std::ifstream side(path.string() + ".norm.json");
    if (!side) throw Error(ErrorCode::IoError, "missing " + path.string() + ".norm.json");
    try {
      const json j = json::parse(side);
      b.frames = j.at("frames").get<std::size_t>();
      b.stats = stats_from_json(j.at("stats"));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::IoError, path.string() + ".norm.json: " + e.what());
    }
    return b;
  }
  in.clear();
  in.seekg(0);
  try {
    const json j = json::parse(in);
    if (j.at("format").get<int>() != kModelFormat) throw Error(ErrorCode::IoError, path.string() + ": unsupported model format");
    const Family fam = family_from_string(j.at("family").get<std::string>());
    if (fam == Family::Linear) {
      LinearModel m;
      const auto w = j.at("weights").get<std::vector<double>>();
      m.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
      m.intercept = j.at("intercept").get<double>();
      m.jittered = j.at("jittered").get<bool>();
      return m;
    }
    if (fam == Family::Forest) {
      ForestModel m;
      const auto& c = j.at("config");
      m.config.n_trees = c.at("n_trees").get<int>();
      m.config.max_depth = c.at("max_depth").get<int>();
      m.config.max_features = c.at("max_features").get<int>();
      m.config.bootstrap = c.at("bootstrap").get<bool>();
      m.config.seed = c.at("seed").get<std::uint64_t>();
      m.tree_seeds = j.at("tree_seeds").get<std::vector<std::uint64_t>>();
      m.impurity_decrease = j.at("impurity_decrease").get<std::vector<double>>();
      for (const auto& t : j.at("trees")) m.trees.push_back(tree_from_json(t));
      return m;
    }
    if (fam == Family::Gbt) {
      GbtModel m;
      const auto& c = j.at("config");
      m.config.rounds = c.at("rounds").get<int>();
      m.config.max_depth = c.at("max_depth").get<int>();
      m.config.learning_rate = c.at("learning_rate").get<double>();
      m.config.alpha = c.at("alpha").get<double>();
      m.config.lambda = c.at("lambda").get<double>();
      m.base_score = j.at("base_score").get<double>();
      m.loss_log = j.at("loss_log").get<std::vector<double>>();
      m.gain = j.at("gain").get<std::vector<double>>();
      for (const auto& t : j.at("trees")) m.trees.push_back(tree_from_json(t));
      return m;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, path.string() + ": " + e.what());
  }
  throw Error(ErrorCode::IoError, path.string() + ": CNN models are stored as binary weight files");
}

}  // namespace fcf::models
