#pragma once

#include <stdexcept>
#include <string>

namespace lrcw {

/// Malformed or missing input data (files, manifests, records).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not conform to an operation's contract.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values produced during training.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or command-line usage.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace lrcw
