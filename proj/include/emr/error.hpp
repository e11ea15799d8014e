#pragma once

#include <stdexcept>
#include <string>

namespace emr {

/// Raised for contract violations on arguments (shapes, ranges, lengths).
struct InvalidArgument : std::invalid_argument
{
  using std::invalid_argument::invalid_argument;
};

/// Raised when dataset files are missing, truncated or malformed.
struct IngestError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

/// Raised by a forward pass whose activations overflow.
struct NumericalError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

/// Raised when optimization produces a non-finite loss.
struct TrainingFailure : std::runtime_error
{
  TrainingFailure(std::string const &what, int epoch)
    : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ")")
    , epoch{epoch}
  {
  }
  int epoch;
};

} // namespace emr
