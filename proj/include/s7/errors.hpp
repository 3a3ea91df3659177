#pragma once

#include <stdexcept>
#include <string>

namespace s7 {

// Tensor dimensions disagree.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bad scalar argument (index out of range, empty window, ...).
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Value outside the domain of a mapping.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// A NaN or Inf appeared where finite values are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file; message carries path and line.
struct IngestionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid run configuration; message names the offending field.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace s7
