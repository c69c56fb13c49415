#pragma once

#include <stdexcept>
#include <string>

namespace arena {

enum class ErrorKind {
  NotPositiveDefinite,
  SingularDowndate,
  LengthMismatch,
  InvalidCounts,
  ForgetTooLarge,
  EmptyClass,
  EmptyData,
  DegenerateGram,
  DimensionMismatch,
  UnknownId,
  TranscriptMismatch,
  NotParametric,
  NotClassifier,
  EmptyForget,
  NotConvexScheme,
  BudgetExhausted,
  InsufficientPopulation,
  AllTrialsAborted,
  ConfigError,
  MixedSchemaVersions,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::SingularDowndate: return "SingularDowndate";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::InvalidCounts: return "InvalidCounts";
    case ErrorKind::ForgetTooLarge: return "ForgetTooLarge";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::EmptyData: return "EmptyData";
    case ErrorKind::DegenerateGram: return "DegenerateGram";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::UnknownId: return "UnknownId";
    case ErrorKind::TranscriptMismatch: return "TranscriptMismatch";
    case ErrorKind::NotParametric: return "NotParametric";
    case ErrorKind::NotClassifier: return "NotClassifier";
    case ErrorKind::EmptyForget: return "EmptyForget";
    case ErrorKind::NotConvexScheme: return "NotConvexScheme";
    case ErrorKind::BudgetExhausted: return "BudgetExhausted";
    case ErrorKind::InsufficientPopulation: return "InsufficientPopulation";
    case ErrorKind::AllTrialsAborted: return "AllTrialsAborted";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::MixedSchemaVersions: return "MixedSchemaVersions";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above so
/// callers (and the game loop) can branch on it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace arena
