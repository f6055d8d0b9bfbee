// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mtl {

// Root of every error raised by the library. Each subclass maps onto one
// CLI exit code (see tools/mtlattn.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Sequence longer than a fixed-size table allows.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class DeterminismError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Parse failure with the 1-based line number of the offending row.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : Error("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class TruncationError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace mtl
