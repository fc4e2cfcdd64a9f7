#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pdm {

enum class ErrorKind {
  Schema,
  Order,
  EmptyInput,
  Config,
  DuplicateId,
  UnknownSequence,
  UnknownFault,
  UnitMismatch,
  Scenario,
  TooFewValues,
  Degenerate,
  Selection,
  Dimension,
  Io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Order: return "order";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::Config: return "config";
    case ErrorKind::DuplicateId: return "duplicate-id";
    case ErrorKind::UnknownSequence: return "unknown-sequence";
    case ErrorKind::UnknownFault: return "unknown-fault";
    case ErrorKind::UnitMismatch: return "unit-mismatch";
    case ErrorKind::Scenario: return "scenario";
    case ErrorKind::TooFewValues: return "too-few-values";
    case ErrorKind::Degenerate: return "degenerate-input";
    case ErrorKind::Selection: return "selection";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so callers (and the CLI
/// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace pdm
