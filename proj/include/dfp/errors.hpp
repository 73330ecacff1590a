#pragma once

#include <stdexcept>
#include <string>

namespace dfp {

// Invalid shapes, sizes and parameter values.
using invalid_argument = std::invalid_argument;

// Inputs whose dimensions or channel counts disagree.
class shape_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inputs for which an estimate is undefined (e.g. a constant plane has no
// usable spectrum).
class degenerate_input : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values during optimization.
class numeric_error : public std::runtime_error {
 public:
  numeric_error(const std::string& what, long iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dfp
