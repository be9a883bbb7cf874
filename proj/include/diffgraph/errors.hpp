#pragma once

#include <stdexcept>
#include <string>

namespace diffgraph {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or width disagreement between tensor operands.
struct DimensionError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// An API precondition was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// Data failed semantic validation (bad index, label out of range, ...).
struct ValidationError : Error {
  using Error::Error;
};

// Syntactically malformed input file.
struct ParseError : Error {
  using Error::Error;
};

// Structurally inconsistent data (mismatched widths across graphs, ...).
struct FormatError : Error {
  using Error::Error;
};

// Bad model/run configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Bad command-line usage.
struct UsageError : Error {
  using Error::Error;
};

// Optimizer state does not match the parameters it is applied to.
struct StateError : Error {
  using Error::Error;
};

struct LoadError : Error {
  using Error::Error;
};

struct CheckpointVersionError : LoadError {
  using LoadError::LoadError;
};

struct CheckpointMissingTensorError : LoadError {
  using LoadError::LoadError;
};

struct CheckpointShapeError : LoadError {
  using LoadError::LoadError;
};

// Training aborted (non-finite loss); carries the optimizer step.
struct TrainAbortError : Error {
  TrainAbortError(const std::string& msg, long step_)
      : Error(msg), step(step_) {}
  long step;
};

}  // namespace diffgraph
