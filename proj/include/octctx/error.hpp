#pragma once

#include <stdexcept>
#include <string>

namespace octctx {

// Base of every error the library throws. Subclasses map onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what) : Error("invalid input: " + what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse error: " + what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error("numerical error: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

class ModelMismatch : public Error {
 public:
  explicit ModelMismatch(const std::string& what) : Error("model mismatch: " + what) {}
};

class CorruptStream : public Error {
 public:
  explicit CorruptStream(const std::string& what) : Error("corrupt stream: " + what) {}
};

class InsufficientClasses : public Error {
 public:
  explicit InsufficientClasses(const std::string& what)
      : Error("insufficient classes: " + what) {}
};

}  // namespace octctx
