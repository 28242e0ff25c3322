#pragma once

#include <stdexcept>
#include <string>

namespace medctx {

// Error taxonomy used across the library. Everything derives from
// std::runtime_error so callers can catch broadly or by kind.

/// Tensor extents do not satisfy an operation's shape contract.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A precondition on arguments or call order was violated.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed or truncated on-disk data (MCVX / MCTX files, manifests).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value or combination.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Filesystem-level failure (open, read, write).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Training loop failure, e.g. a non-finite loss.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Synthetic data generation could not satisfy its constraints.
struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace medctx
