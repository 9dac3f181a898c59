#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace opdf {

// Failure categories used across the library. Validation failures map to
// process exit code 2, numerical runtime failures to exit code 3.
enum class ErrKind {
  // tensor-core / linalg / mpo
  ExtentMismatch,
  InvalidPermutation,
  ConvergenceFailure,
  DimProductMismatch,
  EmptyFactorization,
  ShapeMismatch,
  BondMismatch,
  // autodiff / distill
  LabelOutOfRange,
  NonPositiveTemperature,
  NonScalarLoss,
  PlanMismatch,
  NoMatchableLayers,
  DataShapeMismatch,
  // harness
  UnknownGenerator,
  ParseError,
  NonNumericFeature,
  EmptyDataset,
  MissingSummary,
  ConfigError,
  FormatError,
  IoError,
};

const char* err_kind_name(ErrKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, const std::string& message)
      : std::runtime_error(std::string(err_kind_name(kind)) + ": " + message),
        kind_(kind) {}

  ErrKind kind() const { return kind_; }
  const char* kind_name() const { return err_kind_name(kind_); }

  // Numerical runtime failures (exit code 3); everything else is a
  // validation/config failure (exit code 2).
  bool numeric() const { return kind_ == ErrKind::ConvergenceFailure; }

 private:
  ErrKind kind_;
};

inline const char* err_kind_name(ErrKind kind) {
  switch (kind) {
    case ErrKind::ExtentMismatch: return "ExtentMismatch";
    case ErrKind::InvalidPermutation: return "InvalidPermutation";
    case ErrKind::ConvergenceFailure: return "ConvergenceFailure";
    case ErrKind::DimProductMismatch: return "DimProductMismatch";
    case ErrKind::EmptyFactorization: return "EmptyFactorization";
    case ErrKind::ShapeMismatch: return "ShapeMismatch";
    case ErrKind::BondMismatch: return "BondMismatch";
    case ErrKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrKind::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrKind::NonScalarLoss: return "NonScalarLoss";
    case ErrKind::PlanMismatch: return "PlanMismatch";
    case ErrKind::NoMatchableLayers: return "NoMatchableLayers";
    case ErrKind::DataShapeMismatch: return "DataShapeMismatch";
    case ErrKind::UnknownGenerator: return "UnknownGenerator";
    case ErrKind::ParseError: return "ParseError";
    case ErrKind::NonNumericFeature: return "NonNumericFeature";
    case ErrKind::EmptyDataset: return "EmptyDataset";
    case ErrKind::MissingSummary: return "MissingSummary";
    case ErrKind::ConfigError: return "ConfigError";
    case ErrKind::FormatError: return "FormatError";
    case ErrKind::IoError: return "IoError";
  }
  return "UnknownError";
}

namespace detail {

inline void msg_append(std::ostringstream&) {}

template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  msg_append(os, rest...);
}

}  // namespace detail

template <typename... Parts>
[[noreturn]] void fail(ErrKind kind, const Parts&... parts) {
  std::ostringstream os;
  detail::msg_append(os, parts...);
  throw Error(kind, os.str());
}

template <typename... Parts>
void require(bool cond, ErrKind kind, const Parts&... parts) {
  if (!cond) fail(kind, parts...);
}

}  // namespace opdf
