#include "oocmice/error.hpp"

namespace oocmice {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Schema: return "schema";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Format: return "format";
    case ErrorCode::Bounds: return "bounds";
    case ErrorCode::Type: return "type";
    case ErrorCode::Checkpoint: return "checkpoint";
    case ErrorCode::Budget: return "budget";
    case ErrorCode::Io: return "io";
    case ErrorCode::Declaration: return "declaration";
    case ErrorCode::Plan: return "plan";
    case ErrorCode::FormulaParse: return "formula";
    case ErrorCode::AllMissing: return "all_missing";
    case ErrorCode::Model: return "model";
    case ErrorCode::Numeric: return "numeric";
    case ErrorCode::Separation: return "separation";
    case ErrorCode::Contract: return "contract";
    case ErrorCode::Analysis: return "analysis";
    case ErrorCode::Imputation: return "imputation";
    case ErrorCode::Amputation: return "amputation";
    case ErrorCode::Usage: return "usage";
  }
  return "unknown";
}

}  // namespace oocmice
