#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fcf/error.hpp"
#include "fcf/eval.hpp"
#include "fcf/models/model.hpp"
#include "fcf/pipeline.hpp"
#include "fcf/report.hpp"
#include "fcf/synth.hpp"

using namespace fcf;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitCheck = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::uint64_t seed = 7;
  std::vector<std::string> config;
  std::string family = "forest";
  std::string features;
  std::string spectrograms;
  std::string subject;
  std::string out;
  bool check = false;
  std::optional<double> max_rmse;
};

double parse_number(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw UsageError("config " + key + ": not a number: " + v);
  return x;
}

int parse_int(const std::string& key, const std::string& v) {
  const double x = parse_number(key, v);
  if (x != static_cast<int>(x)) throw UsageError("config " + key + ": not an integer: " + v);
  return static_cast<int>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config " + key + ": expected true or false, got " + v);
}

models::TrainConfig train_config(const Common& c) {
  models::TrainConfig t;
  try {
    t.family = models::family_from_string(c.family);
  } catch (const Error&) {
    throw UsageError("unknown family: " + c.family);
  }
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"features",
       [&](auto& k, auto& v) {
         if (v != "relative" && v != "raw") throw UsageError("config " + k + ": expected relative or raw");
         t.features = v == "raw" ? models::FeatureMode::Raw : models::FeatureMode::Relative;
       }},
      {"forest.n_trees", [&](auto& k, auto& v) { t.forest.n_trees = parse_int(k, v); }},
      {"forest.max_depth", [&](auto& k, auto& v) { t.forest.max_depth = parse_int(k, v); }},
      {"forest.max_features", [&](auto& k, auto& v) { t.forest.max_features = parse_int(k, v); }},
      {"forest.bootstrap", [&](auto& k, auto& v) { t.forest.bootstrap = parse_bool(k, v); }},
      {"gbt.rounds", [&](auto& k, auto& v) { t.gbt.rounds = parse_int(k, v); }},
      {"gbt.max_depth", [&](auto& k, auto& v) { t.gbt.max_depth = parse_int(k, v); }},
      {"gbt.learning_rate", [&](auto& k, auto& v) { t.gbt.learning_rate = parse_number(k, v); }},
      {"gbt.alpha", [&](auto& k, auto& v) { t.gbt.alpha = parse_number(k, v); }},
      {"gbt.lambda", [&](auto& k, auto& v) { t.gbt.lambda = parse_number(k, v); }},
      {"cnn.learning_rate", [&](auto& k, auto& v) { t.cnn.learning_rate = parse_number(k, v); }},
      {"cnn.batch_size", [&](auto& k, auto& v) { t.cnn.batch_size = parse_int(k, v); }},
      {"cnn.patience", [&](auto& k, auto& v) { t.cnn.patience = parse_int(k, v); }},
      {"cnn.max_epochs", [&](auto& k, auto& v) { t.cnn.max_epochs = parse_int(k, v); }},
      {"cnn.dropout", [&](auto& k, auto& v) { t.cnn.dropout = parse_number(k, v); }},
      {"cnn.val_fraction", [&](auto& k, auto& v) { t.cnn.val_fraction = parse_number(k, v); }},
      {"cnn.per_bin_norm", [&](auto& k, auto& v) { t.per_bin_norm = parse_bool(k, v); }},
  };
  for (const auto& kv : c.config) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("config entries are key=value, got: " + kv);
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    const auto it = setters.find(key);
    if (it == setters.end()) throw UsageError("unknown config key: " + key);
    it->second(key, value);
  }
  return t;
}

std::string now_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Wall-clock data lives next to the output so the primary file stays reproducible.
void write_sidecar(const fs::path& out, const std::string& command, double seconds) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["finished_utc"] = now_utc();
  j["elapsed_s"] = seconds;
  std::ofstream f(out.string() + ".run.json");
  f << j.dump(2) << '\n';
}

std::vector<TrialSamples> load_samples(const Common& c) {
  if (c.features.empty()) throw UsageError("--features is required");
  auto trials = io::read_features_csv(c.features);
  if (!c.spectrograms.empty()) io::read_spectrograms(c.spectrograms, trials);
  std::set<std::string> subjects;
  for (const auto& t : trials) subjects.insert(t.subject);
  std::string subject = c.subject;
  if (subject.empty()) {
    if (subjects.size() > 1) throw UsageError("several subjects in the features file; pick one with --subject");
    if (!subjects.empty()) subject = *subjects.begin();
  }
  std::vector<TrialSamples> out;
  for (auto& t : trials) {
    if (t.subject == subject) out.push_back(std::move(t));
  }
  if (out.empty()) throw Error(ErrorCode::TooFewTrials, "no trials for subject " + subject);
  return out;
}

std::vector<TrialSamples> of_task(const std::vector<TrialSamples>& all, const std::string& task) {
  const TaskKind k = task_from_string(task);
  std::vector<TrialSamples> out;
  for (const auto& t : all) {
    if (t.task == k) out.push_back(t);
  }
  if (out.empty()) throw Error(ErrorCode::TooFewTrials, "no " + task + " trials");
  return out;
}

double default_threshold(models::Family f) {
  return f == models::Family::Forest || f == models::Family::Gbt ? 15.0 : 30.0;
}

void print_summary(const eval::EvalReport& r) {
  std::cout << r.mode << " " << r.family << " " << r.train_task;
  if (r.mode == "cross") std::cout << " -> " << r.test_task;
  std::cout << ": RMSE " << r.mean_rmse << " +- " << r.std_rmse << " (clamped " << r.mean_rmse_clamped << ")";
  if (r.mean_r2) std::cout << ", R2 " << *r.mean_r2;
  std::cout << ", " << r.folds.size() << " folds\n";
  for (const auto& f : r.folds) {
    std::cout << "  " << f.trial_id << "  cycles " << f.truth.size() << "  RMSE " << f.rmse << "  seed " << f.seed
              << '\n';
  }
  if (r.importance) {
    const char* names[4] = {"MNF", "MDF", "TP", "RMS"};
    std::cout << "  importance:";
    for (int k = 0; k < 4; ++k) std::cout << ' ' << names[k] << ' ' << (*r.importance)[k];
    std::cout << '\n';
  }
  for (const auto& n : r.notes) std::cout << "  note: " << n << '\n';
  for (const auto& [k, v] : r.seeds) std::cout << "  seed " << k << " = " << v << '\n';
}

int finish_report(const eval::EvalReport& r, const Common& c, const std::string& predictions,
                  const std::optional<double>& baseline) {
  print_summary(r);
  if (!c.out.empty()) {
    report::write_report(c.out, r);
    if (!predictions.empty()) report::write_predictions_csv(predictions, r);
  }
  if (!c.check) return kExitOk;
  const double limit = c.max_rmse.value_or(default_threshold(models::family_from_string(r.family)));
  bool ok = r.mean_rmse <= limit;
  std::cout << "check: mean RMSE " << r.mean_rmse << (ok ? " <= " : " > ") << limit << '\n';
  if (baseline) {
    const bool within = r.mean_rmse - *baseline <= 10.0;
    std::cout << "check: degradation " << r.mean_rmse - *baseline << (within ? " <= " : " > ") << "10\n";
    ok = ok && within;
  }
  return ok ? kExitOk : kExitCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fatigue-cycle-fraction estimation from shoulder EMG"};
  app.require_subcommand(1);

  Common c;
  auto add_common = [&](CLI::App* sub, bool with_family) {
    sub->add_option("--seed", c.seed, "Master seed")->capture_default_str();
    sub->add_option("--out", c.out, "Output path");
    if (with_family) {
      sub->add_option("--family", c.family, "linear, forest, gbt or cnn")->capture_default_str();
      sub->add_option("--config", c.config, "Hyperparameter override key=value (repeatable)");
      sub->add_option("--features", c.features, "Features CSV from extract");
      sub->add_option("--spectrograms", c.spectrograms, "Spectrogram container from extract (cnn)");
      sub->add_option("--subject", c.subject, "Subject id when the features hold several");
    }
  };

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  int subjects = 1, trials = 6;
  std::vector<std::string> tasks{"lateral"};
  add_common(synth_cmd, false);
  synth_cmd->add_option("--subjects", subjects)->check(CLI::PositiveNumber)->capture_default_str();
  synth_cmd->add_option("--trials", trials, "Trials per subject and task")->check(CLI::PositiveNumber)->capture_default_str();
  synth_cmd->add_option("--task", tasks, "lateral, vertical, circular (repeatable)")
      ->check(CLI::IsMember({"lateral", "vertical", "circular"}));

  // extract
  auto* extract_cmd = app.add_subcommand("extract", "Per-cycle features (and spectrograms) from trial directories");
  std::string in_dir, spec_out;
  add_common(extract_cmd, false);
  extract_cmd->add_option("--in", in_dir, "Dataset root or single trial directory")->required();
  extract_cmd->add_option("--spectrograms", spec_out, "Also write the spectrogram container here");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model on every trial of a task");
  std::string task = "lateral";
  add_common(train_cmd, true);
  train_cmd->add_option("--task", task)->check(CLI::IsMember({"lateral", "vertical", "circular"}))->capture_default_str();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Leave-one-trial-out evaluation");
  bool loto = false;
  std::string predictions;
  add_common(eval_cmd, true);
  eval_cmd->add_flag("--loto", loto, "Leave-one-trial-out (the only protocol)");
  eval_cmd->add_option("--task", task)->check(CLI::IsMember({"lateral", "vertical", "circular"}))->capture_default_str();
  eval_cmd->add_flag("--check", c.check, "Exit 3 when the mean RMSE exceeds the threshold");
  eval_cmd->add_option("--max-rmse", c.max_rmse, "Check threshold (default 15 for trees, 30 otherwise)");
  eval_cmd->add_option("--predictions", predictions, "Per-cycle predictions CSV");

  // cross
  auto* cross_cmd = app.add_subcommand("cross", "Train on one task, test unchanged on another");
  std::string train_task = "lateral", test_task = "vertical", baseline_path;
  add_common(cross_cmd, true);
  cross_cmd->add_option("--train-task", train_task)->check(CLI::IsMember({"lateral", "vertical", "circular"}))->capture_default_str();
  cross_cmd->add_option("--test-task", test_task)->check(CLI::IsMember({"lateral", "vertical", "circular"}))->capture_default_str();
  cross_cmd->add_flag("--check", c.check, "Exit 3 when a threshold fails");
  cross_cmd->add_option("--max-rmse", c.max_rmse, "Check threshold (default 15 for trees, 30 otherwise)");
  cross_cmd->add_option("--baseline", baseline_path, "Within-task LOTO report; checks degradation <= 10 points");
  cross_cmd->add_option("--predictions", predictions, "Per-cycle predictions CSV");

  // importance
  auto* imp_cmd = app.add_subcommand("importance", "Feature-family importance of a forest or gbt model");
  std::string model_path;
  add_common(imp_cmd, true);
  imp_cmd->add_option("--model", model_path, "Saved model (otherwise trained on --features)");
  imp_cmd->add_option("--task", task)->check(CLI::IsMember({"lateral", "vertical", "circular"}))->capture_default_str();

  // report
  auto* report_cmd = app.add_subcommand("report", "Summarize saved report JSON files");
  std::vector<std::string> report_paths;
  report_cmd->add_option("reports", report_paths, "Report files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const auto t0 = std::chrono::steady_clock::now();
  const std::string command_line = [&] {
    std::string s;
    for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
    return s;
  }();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  try {
    if (synth_cmd->parsed()) {
      if (c.out.empty()) throw UsageError("--out is required");
      synth::DatasetSpec spec;
      spec.n_subjects = subjects;
      spec.trials_per_subject = trials;
      spec.seed = c.seed;
      spec.tasks.clear();
      for (const auto& t : tasks) spec.tasks.push_back(task_from_string(t));
      const auto dirs = synth::synth_dataset(spec, c.out);
      std::cout << "wrote " << dirs.size() << " trials to " << c.out << " (seed " << c.seed << ")\n";
      std::ifstream manifest(fs::path(c.out) / "manifest.tsv");
      std::cout << manifest.rdbuf();
      write_sidecar(fs::path(c.out) / "manifest.tsv", command_line, elapsed());
      return kExitOk;
    }

    if (extract_cmd->parsed()) {
      if (c.out.empty()) throw UsageError("--out is required");
      std::vector<fs::path> dirs = fs::exists(fs::path(in_dir) / "meta.json")
                                       ? std::vector<fs::path>{in_dir}
                                       : list_trial_dirs(in_dir);
      if (dirs.empty()) throw Error(ErrorCode::IoError, "no trial directories under " + in_dir);
      PipelineConfig pc;
      pc.spectrograms = !spec_out.empty();
      std::vector<TrialSamples> samples;
      std::size_t rows = 0;
      for (const auto& d : dirs) {
        const Trial t = read_trial(d);
        if (!t.srf) std::cerr << "warning: " << d.string() << " has no srf.csv; SRF column left empty\n";
        samples.push_back(process_trial(t, pc));
        rows += samples.back().size();
      }
      io::write_features_csv(c.out, samples);
      if (!spec_out.empty()) {
        io::SpectrogramHeader h;
        h.stft = pc.stft;
        h.n_frames = pc.cnn_frames;
        h.n_bins = samples.front().spectrograms.empty() ? 0 : samples.front().spectrograms[0][0].rows();
        io::write_spectrograms(spec_out, samples, h);
      }
      std::cout << "extracted " << rows << " cycles from " << dirs.size() << " trials to " << c.out << '\n';
      return kExitOk;
    }

    if (report_cmd->parsed()) {
      for (const auto& p : report_paths) print_summary(report::read_report(p));
      return kExitOk;
    }

    const models::TrainConfig tc = train_config(c);
    std::cout << "seed " << c.seed << '\n';
    const auto all = load_samples(c);

    if (train_cmd->parsed()) {
      if (c.out.empty()) throw UsageError("--out is required");
      const auto ts = of_task(all, task);
      const auto model = models::train_model(ts, eval::seeded(tc, c.seed));
      models::save_model(model, c.out);
      write_sidecar(c.out, command_line, elapsed());
      std::cout << "trained " << c.family << " on " << ts.size() << " " << task << " trials -> " << c.out << '\n';
      std::cout << "seed forest " << eval::seeded(tc, c.seed).forest.seed << ", cnn " << eval::seeded(tc, c.seed).cnn.seed
                << '\n';
      return kExitOk;
    }

    if (eval_cmd->parsed()) {
      if (!loto) throw UsageError("eval needs --loto");
      eval::EvalConfig cfg;
      cfg.train = tc;
      cfg.seed = c.seed;
      const auto r = eval::loto_cv(of_task(all, task), cfg);
      const int code = finish_report(r, c, predictions, std::nullopt);
      if (!c.out.empty()) write_sidecar(c.out, command_line, elapsed());
      return code;
    }

    if (cross_cmd->parsed()) {
      eval::EvalConfig cfg;
      cfg.train = tc;
      cfg.seed = c.seed;
      const auto train = of_task(all, train_task);
      const auto test = of_task(all, test_task);
      const auto model = models::train_model(train, eval::seeded(tc, c.seed));
      const auto r = eval::cross_task_eval(model, train, test, cfg);
      std::optional<double> baseline;
      if (!baseline_path.empty()) baseline = report::read_report(baseline_path).mean_rmse;
      const int code = finish_report(r, c, predictions, baseline);
      if (!c.out.empty()) write_sidecar(c.out, command_line, elapsed());
      return code;
    }

    if (imp_cmd->parsed()) {
      const models::Model model = model_path.empty() ? models::train_model(of_task(all, task), eval::seeded(tc, c.seed))
                                                     : models::load_model(model_path);
      const auto fi = models::feature_importance(model);
      nlohmann::ordered_json j;
      j["family"] = models::to_string(models::family_of(model));
      j["seed"] = c.seed;
      const char* names[4] = {"MNF", "MDF", "TP", "RMS"};
      for (int k = 0; k < 4; ++k) j["families"][names[k]] = fi.family[k];
      for (int k : fi.ranking) j["ranking"].push_back(names[k]);
      const auto cols = cycles::feature_names();
      for (std::size_t i = 0; i < fi.per_feature.size() && i < cols.size(); ++i) j["features"][cols[i]] = fi.per_feature[i];
      const std::string text = j.dump(2) + "\n";
      std::cout << text;
      if (!c.out.empty()) {
        std::ofstream(c.out) << text;
        write_sidecar(c.out, command_line, elapsed());
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
