#pragma once

#include <stdexcept>
#include <string>

namespace ulm {

// Base of every error the library raises. Callers that only care about
// "the pipeline failed" can catch this one type.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed or truncated file payloads.
class FormatError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

// A window or coordinate outside the frame.
class BoundsError : public Error {
public:
  using Error::Error;
};

// Violated precondition (shape mismatch, degenerate input, invalid value).
class ContractError : public Error {
public:
  using Error::Error;
};

// Bad configuration / scenario file contents.
class ConfigError : public Error {
public:
  using Error::Error;
};

// A row or column of a correspondence matrix has no mass left; the bubble
// it belongs to has no plausible partner.
class GateError : public Error {
public:
  GateError(const std::string &what, bool is_row, std::size_t index)
      : Error(what), is_row_(is_row), index_(index) {}

  bool is_row() const { return is_row_; }
  std::size_t index() const { return index_; }

private:
  bool is_row_;
  std::size_t index_;
};

} // namespace ulm
