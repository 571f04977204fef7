#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rotatek {

// Coarse classification used by the CLI to pick an exit code.
enum class ErrorKind {
  usage,      // bad configuration or arguments
  data,       // malformed or inconsistent input data
  numerical,  // factorization / iteration breakdown
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string origin, const std::string& what)
      : std::runtime_error("[" + origin + "] " + what), kind_(kind), origin_(std::move(origin)) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Module that raised the error ("linalg", "rotation", "trace", ...).
  const std::string& origin() const noexcept { return origin_; }

 private:
  ErrorKind kind_;
  std::string origin_;
};

class DimensionError : public Error {
 public:
  DimensionError(std::string origin, const std::string& what)
      : Error(ErrorKind::data, std::move(origin), "dimension mismatch: " + what) {}
};

class ConfigError : public Error {
 public:
  ConfigError(std::string origin, const std::string& what)
      : Error(ErrorKind::usage, std::move(origin), "invalid configuration: " + what) {}
};

class EmptyInputError : public Error {
 public:
  EmptyInputError(std::string origin, const std::string& what)
      : Error(ErrorKind::data, std::move(origin), "empty input: " + what) {}
};

class SymmetryError : public Error {
 public:
  SymmetryError(std::string origin, double relative_asymmetry)
      : Error(ErrorKind::data, std::move(origin),
              "matrix is not symmetric (relative asymmetry " + std::to_string(relative_asymmetry) + ")"),
        asymmetry_(relative_asymmetry) {}
  double asymmetry() const noexcept { return asymmetry_; }

 private:
  double asymmetry_;
};

class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(std::string origin, std::size_t pivot, double value)
      : Error(ErrorKind::numerical, std::move(origin),
              "matrix is not positive definite: pivot " + std::to_string(pivot) + " = " +
                  std::to_string(value)),
        pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

class SingularTriangle : public Error {
 public:
  SingularTriangle(std::string origin, std::size_t index)
      : Error(ErrorKind::numerical, std::move(origin),
              "triangular factor has a zero diagonal at index " + std::to_string(index)),
        index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class NumericalBreakdown : public Error {
 public:
  NumericalBreakdown(std::string origin, std::size_t iteration, const std::string& what)
      : Error(ErrorKind::numerical, std::move(origin),
              "numerical breakdown at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

}  // namespace rotatek
