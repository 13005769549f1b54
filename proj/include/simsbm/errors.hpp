#pragma once

#include <stdexcept>
#include <string>

namespace simsbm {

/// Malformed or inconsistent model specification / configuration.
class SpecError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Input data that cannot be read or does not conform to a specification.
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Failure while fitting (empty data, violated numerical certificate).
class FitError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace simsbm
