#pragma once

#include <stdexcept>
#include <string>

namespace ws {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or stride violations (bad conv geometry, mismatched operands).
struct DimensionError : Error {
    using Error::Error;
};

// Malformed or unsupported file contents.
struct FormatError : Error {
    using Error::Error;
};

// Index or level outside its documented range.
struct RangeError : Error {
    using Error::Error;
};

// Inconsistent or unsupported configuration values.
struct ConfigError : Error {
    using Error::Error;
};

// Invalid runtime values (NaN disparity, empty valid mask, ...).
struct ValueError : Error {
    using Error::Error;
};

// Autodiff graph misuse (double backward, detached loss).
struct GraphError : Error {
    using Error::Error;
};

// Non-finite values produced by a pipeline stage.
struct NumericalError : Error {
    using Error::Error;
};

// Divergence during optimization.
struct TrainingError : Error {
    using Error::Error;
};

} // namespace ws
