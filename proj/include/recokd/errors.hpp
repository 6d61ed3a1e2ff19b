// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace recokd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when an op would divide by (near) zero or normalize an empty set.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Convolution / resampling geometry that yields an empty or invalid output.
class GeometryError : public Error {
 public:
  using Error::Error;
};

class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

/// Config or plan validation failure. `field()` is a dotted path such as
/// `data.classes[1].target_fraction`.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(std::int64_t step, const std::string& message)
      : Error("diverged at step " + std::to_string(step) + ": " + message), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

}  // namespace recokd
