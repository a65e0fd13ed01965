// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cattn {

/// Base class for every error raised by the library. The C API maps each
/// subclass onto one of the CATTN_ERR_* codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or layer shapes.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// Invalid hyperparameters or run configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Malformed corpus, checkpoint or report input.
class IngestionError : public Error {
public:
  using Error::Error;
};

/// API misuse (e.g. backward from a non-scalar node).
class ContractError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace cattn
