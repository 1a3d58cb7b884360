#include "nuzz/error.hpp"

namespace nuzz {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NoMarginalAvailable: return "NoMarginalAvailable";
    case ErrorCode::UnsupportedFamily: return "UnsupportedFamily";
    case ErrorCode::DegenerateDesign: return "DegenerateDesign";
    case ErrorCode::SingularHessian: return "SingularHessian";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NonFiniteIntegrand: return "NonFiniteIntegrand";
    case ErrorCode::ToleranceNotReached: return "ToleranceNotReached";
    case ErrorCode::BracketNotFound: return "BracketNotFound";
    case ErrorCode::MaxIterationsExceeded: return "MaxIterationsExceeded";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::ZeroTotalRate: return "ZeroTotalRate";
    case ErrorCode::NotGaussian: return "NotGaussian";
    case ErrorCode::BoundViolated: return "BoundViolated";
    case ErrorCode::NonPositiveSigma: return "NonPositiveSigma";
    case ErrorCode::CholeskyFailure: return "CholeskyFailure";
    case ErrorCode::EmptyTrajectory: return "EmptyTrajectory";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace nuzz
