#pragma once

#include <stdexcept>
#include <string>

namespace mocha {

// Bad input, malformed file, or invariant violation in user-supplied data.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A remote scorer, judge, or LLM endpoint failed after its retries ran out.
class ServiceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure during training (non-finite gradients and the like).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mocha
