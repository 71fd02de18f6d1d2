#pragma once

#include <stdexcept>
#include <string>

namespace slu {

// Base of every error the toolkit throws. category() is the short tag used
// by the CLI in "error: <category>: <detail>" lines.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept { return "runtime"; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "dimension"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

class FormatError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "format"; }
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "degenerate-input"; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "numeric"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "io"; }
};

}  // namespace slu
