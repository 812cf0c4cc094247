#pragma once

#include <stdexcept>
#include <string>

namespace fedsurg {

/// Bad input: malformed files, contract violations, invalid configuration.
/// CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while computing: numerical blow-ups, undefined results.
/// CLI maps this to exit code 2.
class ComputationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fedsurg
