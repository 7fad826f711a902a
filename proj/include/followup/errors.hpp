#pragma once

#include <stdexcept>
#include <string>

namespace followup {

// Base for all library errors. The CLI maps error categories to exit codes:
// ConfigError -> 1, DataError (and subclasses) -> 2, everything else -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration or usage.
struct ConfigError : Error {
  using Error::Error;
};

// Problems with input data (files, volumes, pools).
struct DataError : Error {
  using Error::Error;
};

// Malformed file contents (bad magic, truncated payload, ...).
struct FormatError : DataError {
  using DataError::DataError;
};

// Well-formed but unsupported content (e.g. exotic voxel datatype).
struct UnsupportedError : DataError {
  using DataError::DataError;
};

// Filesystem-level failures.
struct IoError : DataError {
  using DataError::DataError;
};

// An operation hit a region with no usable voxels.
struct EmptyRegionError : DataError {
  using DataError::DataError;
};

// Numerically degenerate input (e.g. zero variance inside a mask).
struct DegenerateInputError : DataError {
  using DataError::DataError;
};

// Synthetic data generation could not satisfy its constraints.
struct GenerationError : DataError {
  using DataError::DataError;
};

// Mismatched array shapes; indicates a caller bug.
struct ShapeError : Error {
  using Error::Error;
};

// Unknown name in a lookup (layer names, patient ids, ...).
struct LookupError : Error {
  using Error::Error;
};

}  // namespace followup
