#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cekf {

// Base of every error raised by the library. The CLI maps ConfigError to exit
// code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// |theta| beyond the configured distance from +/-90 deg.
class GimbalProximity : public Error {
 public:
  using Error::Error;
};

class FrameMismatch : public Error {
 public:
  using Error::Error;
};

class SingularDenominator : public Error {
 public:
  using Error::Error;
};

class LowAccelNorm : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

class TofOutOfRange : public Error {
 public:
  using Error::Error;
};

class OutOfSpan : public Error {
 public:
  using Error::Error;
};

class DivideByZero : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyTrajectory : public Error {
 public:
  using Error::Error;
};

// Malformed CSV content; row is 1-based and counts the header line.
class ParseError : public Error {
 public:
  ParseError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

// Time stamp at data row `row` (0-based sample index) does not increase.
class NonMonotonicTime : public Error {
 public:
  explicit NonMonotonicTime(std::size_t row)
      : Error("time is not strictly increasing at sample " + std::to_string(row)),
        row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

// A filter error raised while replaying, tagged with the tick it happened at.
// The original error is attached as the nested exception.
class TickError : public Error {
 public:
  TickError(std::size_t tick, const std::string& what)
      : Error("tick " + std::to_string(tick) + ": " + what), tick_(tick) {}
  std::size_t tick() const { return tick_; }

 private:
  std::size_t tick_;
};

}  // namespace cekf
