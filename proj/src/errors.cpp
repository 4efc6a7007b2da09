#include "ecgstudy/errors.hpp"

#include <fmt/format.h>

namespace ecgstudy {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse: return "parse";
    case ErrorCode::truncation: return "truncation";
    case ErrorCode::unsupported_format: return "unsupported-format";
    case ErrorCode::validation: return "validation";
    case ErrorCode::range: return "range";
    case ErrorCode::lead_not_found: return "lead-not-found";
    case ErrorCode::too_short: return "too-short";
    case ErrorCode::argument: return "argument";
    case ErrorCode::input: return "input";
    case ErrorCode::shape: return "shape";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::empty_matrix: return "empty-matrix";
    case ErrorCode::degenerate_agreement: return "degenerate-agreement";
    case ErrorCode::undefined_auc: return "undefined-auc";
    case ErrorCode::auth: return "auth";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::not_found: return "not-found";
    case ErrorCode::empty_report: return "empty-report";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

ParseError::ParseError(const std::string& message, std::size_t line, std::size_t column)
    : Error(ErrorCode::parse,
            column > 0 ? fmt::format("line {}, column {}: {}", line, column, message)
                       : fmt::format("line {}: {}", line, message)),
      line_(line),
      column_(column) {}

StageError::StageError(std::string stage, const Error& cause)
    : Error(cause.code(), fmt::format("{} stage failed: {}", stage, cause.what())),
      stage_(std::move(stage)),
      cause_code_(cause.code()) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace ecgstudy
