#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace scalefit {

// Base for every failure raised by the library. The CLI maps any Error to
// exit status 1 and everything else (flag parsing) to 2.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Input outside the mathematical domain of a formula, or a non-finite result.
class DomainError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

// A regression produced constants with the wrong sign or otherwise unusable.
class FitFailure : public Error {
 public:
  using Error::Error;
};

// Observed losses at or below the converged-loss term.
class InconsistentConstantsError : public Error {
 public:
  using Error::Error;
};

class SolverError : public Error {
 public:
  using Error::Error;
};

class DiagnosticError : public Error {
 public:
  using Error::Error;
};

class UnreachableLossError : public Error {
 public:
  UnreachableLossError(const std::string& msg, double floor)
      : Error(msg), floor_(floor) {}
  double floor() const { return floor_; }

 private:
  double floor_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class FormatVersionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Wraps a failure from one stage of the fitting pipeline.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& msg)
      : Error(stage + ": " + msg), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace scalefit
