#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nuzz {

enum class ErrorCode {
  InvalidArgument,
  NonFiniteInput,
  DimensionMismatch,
  NoMarginalAvailable,
  UnsupportedFamily,
  DegenerateDesign,
  SingularHessian,
  NonConvergence,
  ParseError,
  RankDeficient,
  NonFiniteIntegrand,
  ToleranceNotReached,
  BracketNotFound,
  MaxIterationsExceeded,
  NonFiniteGradient,
  ZeroTotalRate,
  NotGaussian,
  BoundViolated,
  NonPositiveSigma,
  CholeskyFailure,
  EmptyTrajectory,
  TooFewSamples,
  ConfigError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can dispatch on the kind of failure, not the text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace nuzz
