#pragma once

#include <stdexcept>
#include <string>

namespace glyphnet {

// Validation errors (bad shapes, bad config, bad files) exit with code 1
// from the CLI; numeric errors (NaN/Inf mid-run) exit with code 2.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeMismatch : ValidationError {
  using ValidationError::ValidationError;
};

struct EmptyInput : ValidationError {
  using ValidationError::ValidationError;
};

struct InvalidAxis : ValidationError {
  using ValidationError::ValidationError;
};

struct TapeMismatch : ValidationError {
  using ValidationError::ValidationError;
};

struct LabelOutOfRange : ValidationError {
  using ValidationError::ValidationError;
};

// Eq-5 shape arithmetic failures; a flavor of shape mismatch so conv
// call sites can catch either level.
struct Indivisible : ShapeMismatch {
  using ShapeMismatch::ShapeMismatch;
};

struct KernelTooLarge : ShapeMismatch {
  using ShapeMismatch::ShapeMismatch;
};

struct InvalidScale : ValidationError {
  using ValidationError::ValidationError;
};

struct InvalidDepth : ValidationError {
  using ValidationError::ValidationError;
};

struct ParseError : ValidationError {
  using ValidationError::ValidationError;
};

struct UnknownArchitecture : ValidationError {
  using ValidationError::ValidationError;
};

struct MissingClassDir : ValidationError {
  using ValidationError::ValidationError;
};

struct UnreadableImage : ValidationError {
  using ValidationError::ValidationError;
};

struct InsufficientSamples : ValidationError {
  using ValidationError::ValidationError;
};

struct DatasetLoadError : ValidationError {
  using ValidationError::ValidationError;
};

struct CheckpointMismatch : ValidationError {
  using ValidationError::ValidationError;
};

struct NonFiniteValue : NumericError {
  using NumericError::NumericError;
};

}  // namespace glyphnet
