#pragma once

#include <stdexcept>
#include <string>

namespace dnl {

// Base of every error the library throws. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shapes or extents disagree.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value or combination of values.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Bad input data (labels out of range, empty sets, ...).
class DataError : public Error {
public:
    using Error::Error;
};

// File does not carry the expected magic or version.
class FormatError : public Error {
public:
    using Error::Error;
};

// File ended early or carries inconsistent payload sizes.
class CorruptionError : public Error {
public:
    using Error::Error;
};

// API misuse (e.g. backward from a non-scalar).
class UsageError : public Error {
public:
    using Error::Error;
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace dnl
