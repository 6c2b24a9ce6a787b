#pragma once

#include <stdexcept>
#include <string>

namespace gadet {

/// Base of every error raised by the library. `code()` is the process exit
/// code the CLI maps the error onto.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int code) : std::runtime_error(what), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

// Violated precondition: shapes, indices, marginals.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(what, 1) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, 1) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(what, 3) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(what, 2) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what, 2) {}
};

// Input data that is well-formed but does not fit the model.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what, 2) {}
};

class UndefinedMetricError : public Error {
 public:
  explicit UndefinedMetricError(const std::string& what) : Error(what, 2) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, 3) {}
};

}  // namespace gadet
