#pragma once

#include <stdexcept>
#include <string>

namespace immcognito {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input whose values violate a declared range.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Inconsistent or unsupported configuration (bad flag values, shape mismatch).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Function called outside its mathematical domain (empty cloud, empty batch).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Binary file with a bad magic, version, or truncated payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite forward value encountered while differentiating.
class GradientError : public Error {
 public:
  using Error::Error;
};

}  // namespace immcognito
