#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hilctc {

enum class ErrorKind {
  Parse,
  DimensionMismatch,
  DuplicateId,
  InsufficientPatients,
  InvalidSpec,
  DegenerateInput,
  TooFewPoints,
  UnknownId,
  SingleClass,
  NoCalibration,
  LengthMismatch,
  MissingAssignment,
  DegeneratePool,
  EmptySuggestion,
  EmptyScores,
  InsufficientData,
  OracleFailure,
  MissingModel,
  BudgetExpired,
  Conflict,
  NotFound,
  JournalCorruption,
  InvalidState,
  Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Every failure surfaced by the library carries a machine-readable kind so the
// service and CLI can map it to status codes and exit messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace hilctc
