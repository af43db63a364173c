#include "fcf/report.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fcf/error.hpp"

namespace fcf::report {

using nlohmann::json;

namespace {

constexpr int kReportFormat = 1;
const char* const kFamilies[4] = {"MNF", "MDF", "TP", "RMS"};

json fold_json(const eval::FoldResult& f) {
  json j{{"trial", f.trial_id},       {"task", f.task},   {"cycles", f.cycles},
         {"truth", f.truth},          {"raw", f.raw},     {"rmse", f.rmse},
         {"rmse_clamped", f.rmse_clamped}, {"clamped", f.clamped}, {"seed", f.seed}};
  j["r2"] = f.r2 ? json(*f.r2) : json(nullptr);
  return j;
}

eval::FoldResult fold_from(const json& j) {
  eval::FoldResult f;
  f.trial_id = j.at("trial").get<std::string>();
  f.task = j.at("task").get<std::string>();
  f.cycles = j.at("cycles").get<std::vector<int>>();
  f.truth = j.at("truth").get<std::vector<double>>();
  f.raw = j.at("raw").get<std::vector<double>>();
  f.rmse = j.at("rmse").get<double>();
  f.rmse_clamped = j.at("rmse_clamped").get<double>();
  f.clamped = j.at("clamped").get<int>();
  f.seed = j.at("seed").get<std::uint64_t>();
  if (!j.at("r2").is_null()) f.r2 = j.at("r2").get<double>();
  return f;
}

json fit_json(const eval::LinearFit& f) {
  return {{"slope", f.slope}, {"intercept", f.intercept}, {"r2", f.r2}, {"n", f.n}};
}

}  // namespace

std::string to_json(const eval::EvalReport& r, int indent) {
  json j;
  j["format"] = kReportFormat;
  j["mode"] = r.mode;
  j["family"] = r.family;
  j["subject"] = r.subject;
  j["train_task"] = r.train_task;
  j["test_task"] = r.test_task;
  json folds = json::array();
  for (const auto& f : r.folds) folds.push_back(fold_json(f));
  j["folds"] = std::move(folds);
  j["mean_rmse"] = r.mean_rmse;
  j["std_rmse"] = r.std_rmse;
  j["mean_rmse_clamped"] = r.mean_rmse_clamped;
  j["mean_r2"] = r.mean_r2 ? json(*r.mean_r2) : json(nullptr);
  j["clamp_count"] = r.clamp_count;
  j["failed_to_regress"] = r.failed_to_regress;
  if (r.importance) {
    json imp;
    for (int k = 0; k < 4; ++k) imp[kFamilies[k]] = (*r.importance)[k];
    j["importance"] = std::move(imp);
  } else {
    j["importance"] = nullptr;
  }
  j["feature_importance"] = r.feature_importance;
  j["config"] = r.config;
  j["seeds"] = r.seeds;
  j["notes"] = r.notes;
  return j.dump(indent);
}

eval::EvalReport from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<int>() != kReportFormat) throw Error(ErrorCode::IoError, "unsupported report format");
    eval::EvalReport r;
    r.mode = j.at("mode").get<std::string>();
    r.family = j.at("family").get<std::string>();
    r.subject = j.at("subject").get<std::string>();
    r.train_task = j.at("train_task").get<std::string>();
    r.test_task = j.at("test_task").get<std::string>();
    for (const auto& f : j.at("folds")) r.folds.push_back(fold_from(f));
    r.mean_rmse = j.at("mean_rmse").get<double>();
    r.std_rmse = j.at("std_rmse").get<double>();
    r.mean_rmse_clamped = j.at("mean_rmse_clamped").get<double>();
    if (!j.at("mean_r2").is_null()) r.mean_r2 = j.at("mean_r2").get<double>();
    r.clamp_count = j.at("clamp_count").get<int>();
    r.failed_to_regress = j.at("failed_to_regress").get<bool>();
    if (!j.at("importance").is_null()) {
      std::array<double, 4> imp{};
      for (int k = 0; k < 4; ++k) imp[k] = j.at("importance").at(kFamilies[k]).get<double>();
      r.importance = imp;
    }
    r.feature_importance = j.at("feature_importance").get<std::vector<double>>();
    r.config = j.at("config").get<std::map<std::string, std::string>>();
    r.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
    r.notes = j.at("notes").get<std::vector<std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, std::string("malformed report: ") + e.what());
  }
}

void write_report(const std::filesystem::path& path, const eval::EvalReport& r) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << to_json(r) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

eval::EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void write_predictions_csv(const std::filesystem::path& path, const eval::EvalReport& r) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << "fold,trial,task,cycle,truth,raw,clamped\n";
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    const auto& fold = r.folds[f];
    for (std::size_t k = 0; k < fold.raw.size(); ++k) {
      out << f + 1 << ',' << fold.trial_id << ',' << fold.task << ',' << fold.cycles[k] << ','
          << format_double(fold.truth[k]) << ',' << format_double(fold.raw[k]) << ','
          << format_double(models::clamp_prediction(fold.raw[k]).value) << '\n';
    }
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::string to_json(const eval::SrfCorrelation& c, int indent) {
  json j;
  j["pooled"] = fit_json(c.pooled);
  json per = json::object();
  for (const auto& [id, fit] : c.per_trial) per[id] = fit_json(fit);
  j["per_trial"] = std::move(per);
  return j.dump(indent);
}

}  // namespace fcf::report
