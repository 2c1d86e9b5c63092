#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <string_view>

namespace ptgf {

/// Failure classes. The category decides the CLI exit code.
enum class ErrorCode {
  // input validation (exit 2)
  BaselineDeviation,
  UnknownCovariate,
  InvalidLag,
  InvalidSpec,
  InvalidPanel,
  InvalidRegime,
  SchemaMismatch,
  NonContiguousTime,
  NegativeCount,
  NonpositiveCaseChange,
  DeltaNotEvaluable,
  MissingBootstrap,
  DimensionMismatch,
  PositivityViolation,
  // numerical failure (exit 3)
  RankDeficient,
  NotConverged,
  InsufficientAdherent,
  NoAdherentUnits,
  ZeroDenominator,
  TooManyFailedReplicates,
  // internal invariant breach (exit 4)
  IncompletePhiTable,
  Internal,
};

enum class ErrorCategory { Validation, Numerical, Internal };

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BaselineDeviation: return "BaselineDeviation";
    case ErrorCode::UnknownCovariate: return "UnknownCovariate";
    case ErrorCode::InvalidLag: return "InvalidLag";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InvalidPanel: return "InvalidPanel";
    case ErrorCode::InvalidRegime: return "InvalidRegime";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::NonContiguousTime: return "NonContiguousTime";
    case ErrorCode::NegativeCount: return "NegativeCount";
    case ErrorCode::NonpositiveCaseChange: return "NonpositiveCaseChange";
    case ErrorCode::DeltaNotEvaluable: return "DeltaNotEvaluable";
    case ErrorCode::MissingBootstrap: return "MissingBootstrap";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::PositivityViolation: return "PositivityViolation";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::InsufficientAdherent: return "InsufficientAdherent";
    case ErrorCode::NoAdherentUnits: return "NoAdherentUnits";
    case ErrorCode::ZeroDenominator: return "ZeroDenominator";
    case ErrorCode::TooManyFailedReplicates: return "TooManyFailedReplicates";
    case ErrorCode::IncompletePhiTable: return "IncompletePhiTable";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

constexpr ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::RankDeficient:
    case ErrorCode::NotConverged:
    case ErrorCode::InsufficientAdherent:
    case ErrorCode::NoAdherentUnits:
    case ErrorCode::ZeroDenominator:
    case ErrorCode::TooManyFailedReplicates:
      return ErrorCategory::Numerical;
    case ErrorCode::IncompletePhiTable:
    case ErrorCode::Internal:
      return ErrorCategory::Internal;
    default:
      return ErrorCategory::Validation;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

/// Throws when the condition fails; the detail is only converted to a string on failure.
template <class Detail>
inline void require(bool condition, ErrorCode code, Detail&& detail) {
  if (!condition) [[unlikely]] fail(code, std::string(std::forward<Detail>(detail)));
}

}  // namespace ptgf
