#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ecgstudy {

enum class ErrorCode {
  parse,
  truncation,
  unsupported_format,
  validation,
  range,
  lead_not_found,
  too_short,
  argument,
  input,
  shape,
  numeric,
  empty_matrix,
  degenerate_agreement,
  undefined_auc,
  auth,
  conflict,
  not_found,
  empty_report,
  io,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library carries a code so callers (CLI exit
// codes, HTTP status mapping) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Text-level parse failure. `line` and `column` are 1-based; 0 means unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line, std::size_t column = 0);

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Wraps an error raised inside one stage of the prediction pipeline.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause);

  const std::string& stage() const noexcept { return stage_; }
  ErrorCode cause_code() const noexcept { return cause_code_; }

 private:
  std::string stage_;
  ErrorCode cause_code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace ecgstudy
