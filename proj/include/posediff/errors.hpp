#pragma once

#include <stdexcept>
#include <string>

namespace posediff {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape disagreements (wrong rank, mismatched dims, bad slice bounds).
struct ShapeError : Error {
    using Error::Error;
};

// A primitive produced a NaN/Inf.  The message names the offending op so the
// failure can be traced without a debugger.
struct NumericError : Error {
    using Error::Error;
};

// Caller passed arguments that violate a documented precondition
// (degenerate rotation input, invalid schedule length, bad joint index...).
struct ValidationError : Error {
    using Error::Error;
};

// Point at or behind the camera plane during projection.
struct ProjectionError : Error {
    using Error::Error;
};

// Malformed file contents (pose sets, checkpoints, configs).
struct FormatError : Error {
    using Error::Error;
};

// An iterative solver diverged; message carries the iteration index.
struct OptimizationError : Error {
    using Error::Error;
};

}  // namespace posediff
