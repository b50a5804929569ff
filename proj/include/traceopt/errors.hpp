#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace traceopt {

/// Index used to address an out-of-range entity, with the offending position.
class IndexError : public std::out_of_range {
 public:
  IndexError(std::string msg, std::size_t position)
      : std::out_of_range(std::move(msg)), position_(position) {}

  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// An operation outside the closed op registry (or a structurally
/// unsupported combination, e.g. gathering an arithmetic result).
class UnsupportedOperationError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A point landed behind (or numerically on) the camera plane.
class CheiralityError : public std::runtime_error {
 public:
  CheiralityError(std::string msg, std::size_t observation)
      : std::runtime_error(std::move(msg)), observation_(observation) {}

  std::size_t observation() const { return observation_; }

 private:
  std::size_t observation_;
};

/// Numeric Cholesky hit a non-positive pivot; the matrix is not SPD at the
/// current damping. Carries the pivot index so the caller can report it.
class NotSpdError : public std::runtime_error {
 public:
  NotSpdError(std::string msg, int pivot)
      : std::runtime_error(std::move(msg)), pivot_(pivot) {}

  int pivot() const { return pivot_; }

 private:
  int pivot_;
};

/// NaN/Inf appeared in an iterative recurrence.
class NumericalBreakdownError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string msg, std::size_t line)
      : std::runtime_error(std::move(msg)), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace traceopt
