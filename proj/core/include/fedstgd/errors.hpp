#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedstgd {

/// Dimension or rank disagreement between operands.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Bad or unknown configuration value (maps to CLI exit code 2).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// NaN/Inf detected in inputs or mid-computation (maps to CLI exit code 3).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Metric with no admissible entries, e.g. MAPE when every target is zero.
class UndefinedMetricError : public NumericError {
public:
    using NumericError::NumericError;
};

/// API misuse, e.g. asking for the gradient of a node that is not on the tape.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Collective-round or aggregation contract violated.
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TimeoutError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

class PeerClosedError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

enum class DataErrorKind { io, parse, ordering, missing_cell, duplicate, non_finite, unassigned, client_gap, too_short };

std::string_view to_string(DataErrorKind kind);

/// Malformed dataset, partition or checkpoint file.
class DataError : public std::runtime_error {
public:
    DataError(DataErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    DataErrorKind kind() const { return kind_; }

private:
    DataErrorKind kind_;
};

} // namespace fedstgd
