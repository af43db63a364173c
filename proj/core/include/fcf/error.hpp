#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fcf {

enum class ErrorCode {
  InvalidSpec,
  TooShort,
  NonPositiveMvc,
  WrongStage,
  EmptySegment,
  ZeroPower,
  DegenerateStats,
  NoCycles,
  IncompleteIntervals,
  DegenerateBaseline,
  OutOfRange,
  Underdetermined,
  EmptyData,
  Untrained,
  ShapeMismatch,
  TooFewSamples,
  LengthMismatch,
  ZeroVariance,
  TooFewTrials,
  ChannelMismatch,
  MissingSrf,
  IoError,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Library-wide exception. Every failure path named in the module contracts
/// surfaces as an Error carrying one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::NonPositiveMvc: return "NonPositiveMvc";
    case ErrorCode::WrongStage: return "WrongStage";
    case ErrorCode::EmptySegment: return "EmptySegment";
    case ErrorCode::ZeroPower: return "ZeroPower";
    case ErrorCode::DegenerateStats: return "DegenerateStats";
    case ErrorCode::NoCycles: return "NoCycles";
    case ErrorCode::IncompleteIntervals: return "IncompleteIntervals";
    case ErrorCode::DegenerateBaseline: return "DegenerateBaseline";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::Underdetermined: return "Underdetermined";
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::Untrained: return "Untrained";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::TooFewTrials: return "TooFewTrials";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::MissingSrf: return "MissingSrf";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace fcf
