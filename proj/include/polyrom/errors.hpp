#ifndef POLYROM_ERRORS_HPP
#define POLYROM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace polyrom {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
  using Error::Error;
};

struct NumericalError : Error {
  using Error::Error;
};

// Invalid argument values (negative tolerances, bad flags, out-of-range sizes).
struct InvalidArgument : Error {
  using Error::Error;
};

struct NotImplementedError : Error {
  using Error::Error;
};

}  // namespace polyrom

#endif
