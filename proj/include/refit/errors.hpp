#pragma once

#include <stdexcept>
#include <string>

namespace refit {

// Error taxonomy. Config/usage errors, data errors and numeric failures are
// kept as distinct bases so the CLI can map them to exit codes.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidConfig : ConfigError {
  using ConfigError::ConfigError;
};

struct ShapeMismatch : DataError {
  using DataError::DataError;
};

struct MissingCheckpoint : DataError {
  using DataError::DataError;
};

struct DegenerateRotation : NumericError {
  using NumericError::NumericError;
};

struct NonPositiveScale : NumericError {
  using NumericError::NumericError;
};

struct BehindCamera : NumericError {
  using NumericError::NumericError;
};

struct SceneGenerationFailed : NumericError {
  using NumericError::NumericError;
};

struct NonFinite : NumericError {
  using NumericError::NumericError;
};

struct DegenerateMean : NumericError {
  using NumericError::NumericError;
};

struct DegenerateConfiguration : NumericError {
  using NumericError::NumericError;
};

}  // namespace refit
