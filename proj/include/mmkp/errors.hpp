#pragma once

#include <stdexcept>
#include <string>

namespace mmkp {

// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Pooling or attention over a memory bank with zero rows.
class EmptyBankError : public DimensionError {
 public:
  using DimensionError::DimensionError;
};

// Caller violated an operation precondition (non-scalar loss, a+b != 1, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Input data parsed but failed a domain invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace mmkp
