#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rerm {

// Bad caller input: dimension mismatch, out-of-range index, invalid parameter.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed libsvm text. Carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input whose content violates the task (e.g. 3 labels in binary mode).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Iterative numerics that failed to reach their tolerance.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

// A supplied reference point is not a minimizer of the objective it claims to solve.
class ReferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A bound was requested without the conditions that make it valid.
class PreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Harness failure tagged with the pipeline stage that raised it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace rerm
