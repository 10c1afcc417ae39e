// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace arbigs {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file layout (missing PLY property, bad header, unknown key).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Well-formed file carrying invalid values (NaN, out-of-range).
class DataError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Mismatched image/tensor dimensions.
class DimensionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Violation of the framed provider protocol.
class ProtocolError : public Error {
public:
    using Error::Error;
};

class TimeoutError : public Error {
public:
    using Error::Error;
};

/// Prior provider failed (child exited, returned garbage).
class ProviderError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss or parameters during optimization.
class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace arbigs
