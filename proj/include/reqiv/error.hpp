#pragma once

#include <stdexcept>
#include <string>

namespace reqiv {

// Malformed input, violated preconditions, or data that cannot support the
// requested estimator. The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Estimation failed in a way that no flagged result can represent, e.g. no
// finite step exists from the starting point.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace reqiv
