#pragma once

#include <stdexcept>
#include <string>

namespace liplab {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (files, shapes, geometry).
class DataError : public Error {
 public:
  using Error::Error;
};

/// File-format violation; carries the byte offset where parsing stopped.
class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : DataError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  explicit FormatError(const std::string& what) : DataError(what), offset_(0) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Tensor or image dimensions that do not agree.
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

/// NaN/Inf values, failed gradient checks, diverging training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Bad arguments or configuration supplied by the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace liplab
