#pragma once

#include <stdexcept>
#include <string>

namespace vscg {

/// Operand shapes or dimensions do not line up.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (dims, rates, thresholds, flags).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or truncated on-disk artifact (feature pack, checkpoint, manifest).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerically degenerate input, e.g. an all-zero slice handed to a normalizer.
class DegenerateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// API contract violation, e.g. a non-scalar loss handed to the gradient checker.
class ContractError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values where finite math is required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace vscg
