#pragma once

#include <stdexcept>
#include <string>

namespace dcov {

// Invalid configuration, bad input files, precondition violations.
// CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure during sampling or matrix computation (non-PSD
// precision, non-finite state, ...). CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dcov
