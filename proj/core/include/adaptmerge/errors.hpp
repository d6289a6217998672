// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <stdexcept>
#include <string>

namespace adaptmerge {

// Base class for every error the library raises on bad input. Anything else
// escaping a public call is a bug.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Matrix or tensor dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Adapter configurations disagree or are invalid (d mod r != 0, L == 0, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A marginal entry used as a divisor is zero.
class DegenerateMarginalError : public Error {
 public:
  using Error::Error;
};

// Cost matrix contains NaN or infinity.
class InvalidCostError : public Error {
 public:
  using Error::Error;
};

class SizeLimitError : public Error {
 public:
  using Error::Error;
};

// Container files: wrong magic or version.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Container files: payload shorter or longer than the header declares.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

// Container files: header is self-inconsistent, or values are non-finite.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class EmptySelectionError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

// Malformed experiment spec. The message starts with a JSON pointer.
class SpecError : public Error {
 public:
  using Error::Error;
};

}  // namespace adaptmerge
