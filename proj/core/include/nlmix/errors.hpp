#pragma once

#include <stdexcept>
#include <string>

namespace nlmix {

// Malformed or unusable input data (CSV content, column mapping, validation).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A linear-algebra or quadrature step failed (non-SPD matrix, non-convergence).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The requested model/covariance/fitter combination is not supported.
class UnsupportedError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace nlmix
