#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace refit {

// Base for every error raised by the library. The CLI maps the subclasses
// onto exit codes: ConfigError/DataError -> 2, NumericalError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error("data error: " + what) {}
};

class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error("dimension error: " + what) {}
};

class StepError : public Error {
 public:
  explicit StepError(const std::string& what) : Error("step error: " + what) {}
};

// Non-finite values in losses, states, gradients or parameters.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error("numerical error: " + what) {}
};

}  // namespace refit
