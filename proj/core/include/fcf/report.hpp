#pragma once

#include <filesystem>
#include <string>

#include "fcf/eval.hpp"

namespace fcf::report {

/// Deterministic JSON text (sorted keys, shortest round-trip doubles).
std::string to_json(const eval::EvalReport& r, int indent = 2);
eval::EvalReport from_json(const std::string& text);

void write_report(const std::filesystem::path& path, const eval::EvalReport& r);
eval::EvalReport read_report(const std::filesystem::path& path);

/// fold,trial,task,cycle,truth,raw,clamped
void write_predictions_csv(const std::filesystem::path& path, const eval::EvalReport& r);

std::string to_json(const eval::SrfCorrelation& c, int indent = 2);

}  // namespace fcf::report
