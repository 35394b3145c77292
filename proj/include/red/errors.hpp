#pragma once

#include <stdexcept>
#include <string>

namespace red {

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A quantity whose direction the caller needs is numerically zero.
struct DegenerateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace red
