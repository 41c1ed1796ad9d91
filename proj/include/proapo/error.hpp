#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace proapo {

enum class ErrorCode {
  BadMagic,
  VersionMismatch,
  DimZero,
  RowCountOverflow,
  ZeroNormRow,
  LabelOutOfRange,
  IoFailure,
  ParseError,
  SpecInvalid,
  NoPlaceholder,
  EmptyLibrary,
  FingerprintMismatch,
  CountMismatch,
  UnboundId,
  UnboundDescriptions,
  RemoveAbsent,
  DegenerateVariance,
  EmptyPopulation,
  NoTemplates,
  MissingInput,
  ConfigInvalid,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::DimZero: return "DimZero";
    case ErrorCode::RowCountOverflow: return "RowCountOverflow";
    case ErrorCode::ZeroNormRow: return "ZeroNormRow";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
    case ErrorCode::NoPlaceholder: return "NoPlaceholder";
    case ErrorCode::EmptyLibrary: return "EmptyLibrary";
    case ErrorCode::FingerprintMismatch: return "FingerprintMismatch";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::UnboundId: return "UnboundId";
    case ErrorCode::UnboundDescriptions: return "UnboundDescriptions";
    case ErrorCode::RemoveAbsent: return "RemoveAbsent";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::EmptyPopulation: return "EmptyPopulation";
    case ErrorCode::NoTemplates: return "NoTemplates";
    case ErrorCode::MissingInput: return "MissingInput";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable code. Every failure raised by the
/// library is one of these.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace proapo
