#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vhi {

/// Machine-readable failure categories shared by every module.
enum class ErrorCode {
  DimensionMismatch,
  InvalidArgument,
  NonContractive,
  InnerSolveFailed,
  MaxIterations,
  InsufficientHistory,
  InfeasiblePoint,
  EmptyClampedBoundary,
  NonconformingMesh,
  SmallnessViolated,
  ParameterOutsideLambda,
  NegativeThickness,
  EmptyAdmissibleSet,
  ConfigParse,
  ConfigValidation,
};

inline constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonContractive: return "NonContractive";
    case ErrorCode::InnerSolveFailed: return "InnerSolveFailed";
    case ErrorCode::MaxIterations: return "MaxIterations";
    case ErrorCode::InsufficientHistory: return "InsufficientHistory";
    case ErrorCode::InfeasiblePoint: return "InfeasiblePoint";
    case ErrorCode::EmptyClampedBoundary: return "EmptyClampedBoundary";
    case ErrorCode::NonconformingMesh: return "NonconformingMesh";
    case ErrorCode::SmallnessViolated: return "SmallnessViolated";
    case ErrorCode::ParameterOutsideLambda: return "ParameterOutsideLambda";
    case ErrorCode::NegativeThickness: return "NegativeThickness";
    case ErrorCode::EmptyAdmissibleSet: return "EmptyAdmissibleSet";
    case ErrorCode::ConfigParse: return "ConfigParse";
    case ErrorCode::ConfigValidation: return "ConfigValidation";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vhi
