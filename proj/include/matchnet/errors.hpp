#pragma once

#include <stdexcept>
#include <string>

namespace matchnet {

// Exit-code classes used by the CLI: config=2, data=3, numerical=4.

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit the operation.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Violated call preconditions (non-scalar loss, missing gradients, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class EmptyRecordError : public DataError {
public:
    using DataError::DataError;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

/// Model specification that violates the architecture's structural rules.
class SpecError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class CalibrationError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

} // namespace matchnet
