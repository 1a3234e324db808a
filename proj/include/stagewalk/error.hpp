#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stagewalk {

enum class ErrorCode {
  InvalidDesign,
  ShapeMismatch,
  RowSumViolation,
  NonPositiveRate,
  InconsistentPath,
  UnknownEvent,
  DegenerateData,
  NoInteriorMax,
  NonConvergence,
  NonPositiveInformation,
  StageOutOfRange,
  StateOutOfRange,
  UndefinedTransitionRow,
  EmptyStage,
  SingularCovariance,
  DimensionMismatch,
  UnbalancedDesign,
  MethodUnavailable,
  InvalidArgument,
  ParseError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception carrying a stable machine-readable code. All library failures
/// are reported through this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace stagewalk
