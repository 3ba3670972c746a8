// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace avatar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on a numeric argument was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A timestep or element index fell outside its valid range.
class OutOfRange : public Error {
 public:
  using Error::Error;
};

/// Two tensors (or a tensor and a model) disagree on shape.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or a diverging optimisation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace avatar
