#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qent {

/// Failure categories raised by the library. Every thrown `qent::Error`
/// carries exactly one of these.
enum class ErrorKind {
  NotHermitian,
  TraceNotOne,
  NotPositive,
  NoConvergence,
  IndexOutOfRange,
  SingularSystem,
  ZeroTrace,
  SpecInfeasible,
  EmptyNode,
  NonFiniteInput,
  DivergedLoss,
  EmptyInput,
  NoPredictedPositives,
  NoActualPositives,
  EmptyBackground,
  SubsetBudgetExceeded,
  DegenerateData,
  MethodModelMismatch,
  InvalidArgument,
  InvalidConfig,
  IoFailure,
  FormatError,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotHermitian: return "NotHermitian";
    case ErrorKind::TraceNotOne: return "TraceNotOne";
    case ErrorKind::NotPositive: return "NotPositive";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::ZeroTrace: return "ZeroTrace";
    case ErrorKind::SpecInfeasible: return "SpecInfeasible";
    case ErrorKind::EmptyNode: return "EmptyNode";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::NoPredictedPositives: return "NoPredictedPositives";
    case ErrorKind::NoActualPositives: return "NoActualPositives";
    case ErrorKind::EmptyBackground: return "EmptyBackground";
    case ErrorKind::SubsetBudgetExceeded: return "SubsetBudgetExceeded";
    case ErrorKind::DegenerateData: return "DegenerateData";
    case ErrorKind::MethodModelMismatch: return "MethodModelMismatch";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::FormatError: return "FormatError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace qent
