#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tfnas {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside an operation's mathematical domain (log of x <= 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Out-of-range index (token id, class target, layer index).
class IndexError : public Error {
 public:
  using Error::Error;
};

// Caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or an iteration that did not converge.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A genome or network violates a structural invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Random generation gave up after its retry budget.
class GenerationError : public Error {
 public:
  using Error::Error;
};

// Malformed text input. Carries the 1-based line and the offending field.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line, std::string field)
      : Error(format(message, line, field)), line_(line), field_(std::move(field)) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  static std::string format(const std::string& message, std::size_t line, const std::string& field) {
    std::string out = "line " + std::to_string(line);
    if (!field.empty()) out += ", field '" + field + "'";
    return out + ": " + message;
  }

  std::size_t line_;
  std::string field_;
};

}  // namespace tfnas
