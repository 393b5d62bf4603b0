#pragma once

#include <stdexcept>
#include <string>

namespace aff {

// Error taxonomy used across the library. Each class maps to one failure
// category surfaced at the CLI (exit code 1 for runtime, 2 for config/usage).
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible matrix/vector shapes in a numeric op.
struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Input that is structurally valid but numerically unusable (zero vector etc.).
struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& msg) : Error(msg) {}
};

// Mismatch between declared schema and actual data (arity, ids, labels).
struct SchemaError : Error {
    explicit SchemaError(const std::string& msg) : Error(msg) {}
};

// Operation called in the wrong order (e.g. backward before forward).
struct StateError : Error {
    explicit StateError(const std::string& msg) : Error(msg) {}
};

// Malformed or corrupted file; carries the byte offset of the failure.
struct FormatError : Error {
    FormatError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (at byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

// Invalid configuration value or unknown key.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Training diverged; carries the epoch where the loss became non-finite.
struct TrainingError : Error {
    TrainingError(const std::string& msg, int at_epoch)
        : Error(msg + " (epoch " + std::to_string(at_epoch) + ")"), epoch(at_epoch) {}
    int epoch;
};

// Filesystem failure surfaced from persistence.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace aff
