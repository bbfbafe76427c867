#pragma once

#include <stdexcept>
#include <string>

namespace percept {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A precondition on caller-supplied values was violated.
class InvalidInput : public Error {
public:
  using Error::Error;
};

/// A file or payload could not be parsed. Carries the 1-based line when known.
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class NotFound : public Error {
public:
  using Error::Error;
};

/// Request conflicts with current state (stale token, outstanding pair mismatch).
class Conflict : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace percept
