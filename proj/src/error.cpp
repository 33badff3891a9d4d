#include "hilctc/error.hpp"

namespace hilctc {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Parse: return "parse_error";
    case ErrorKind::DimensionMismatch: return "dimension_mismatch";
    case ErrorKind::DuplicateId: return "duplicate_id";
    case ErrorKind::InsufficientPatients: return "insufficient_patients";
    case ErrorKind::InvalidSpec: return "invalid_spec";
    case ErrorKind::DegenerateInput: return "degenerate_input";
    case ErrorKind::TooFewPoints: return "too_few_points";
    case ErrorKind::UnknownId: return "unknown_id";
    case ErrorKind::SingleClass: return "single_class";
    case ErrorKind::NoCalibration: return "no_calibration";
    case ErrorKind::LengthMismatch: return "length_mismatch";
    case ErrorKind::MissingAssignment: return "missing_assignment";
    case ErrorKind::DegeneratePool: return "degenerate_pool";
    case ErrorKind::EmptySuggestion: return "empty_suggestion";
    case ErrorKind::EmptyScores: return "empty_scores";
    case ErrorKind::InsufficientData: return "insufficient_data";
    case ErrorKind::OracleFailure: return "oracle_failure";
    case ErrorKind::MissingModel: return "missing_model";
    case ErrorKind::BudgetExpired: return "budget_expired";
    case ErrorKind::Conflict: return "conflict";
    case ErrorKind::NotFound: return "not_found";
    case ErrorKind::JournalCorruption: return "journal_corruption";
    case ErrorKind::InvalidState: return "invalid_state";
    case ErrorKind::Io: return "io_error";
  }
  return "unknown";
}

}  // namespace hilctc
