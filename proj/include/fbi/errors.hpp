// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace fbi {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad user data: out-of-range token ids, unnormalized distributions, ...
class InputError : public Error {
 public:
  using Error::Error;
};

// Inconsistent or invalid configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File system and file-format failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Training cannot continue (spike with no usable checkpoint).
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace fbi
