#pragma once

#include <stdexcept>

namespace mptt {

/// Bad experiment configuration or incompatible options (CLI exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values or numeric breakdown at runtime (CLI exit code 3).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mptt
