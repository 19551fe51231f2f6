#pragma once

#include <stdexcept>
#include <string>

namespace retvi {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when a path does not exist or cannot be opened.
struct NotFoundError : Error {
    using Error::Error;
};

// Frames or rasters that must share dimensions do not.
struct DimensionMismatchError : Error {
    using Error::Error;
};

// A sequence load matched zero files.
struct EmptySequenceError : Error {
    using Error::Error;
};

// Tensor shapes incompatible with the requested operation.
struct ShapeError : Error {
    using Error::Error;
};

// Argument outside the mathematical domain of the operation.
struct DomainError : Error {
    using Error::Error;
};

// Non-finite value detected where finiteness is a contract.
struct NumericalError : Error {
    using Error::Error;
};

// Index outside the valid range of a sequence.
struct OutOfRangeError : Error {
    using Error::Error;
};

// Invalid command-line or file configuration.
struct ConfigError : Error {
    using Error::Error;
};

// A file could not be parsed (truncated or corrupt).
struct ParseError : Error {
    using Error::Error;
};

// Checkpoint version does not match the current format.
struct IncompatibleCheckpointError : Error {
    using Error::Error;
};

// Training requested on a dataset with no usable clips.
struct EmptyDatasetError : Error {
    using Error::Error;
};

} // namespace retvi
