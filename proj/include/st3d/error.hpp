#pragma once

#include <stdexcept>
#include <string>

namespace st3d {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated a precondition (bad argument, shape mismatch, bad flag).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Input data is inconsistent or contains invalid values.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A file could not be parsed (bad magic, truncated, wrong version).
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Geometry is degenerate (non-positive radius, coincident spots).
class GeometryError : public DataError {
 public:
  using DataError::DataError;
};

/// A feature vector has zero norm where a direction is required.
class DegenerateFeatureError : public DataError {
 public:
  using DataError::DataError;
};

/// Training produced a non-finite loss.
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

}  // namespace st3d
