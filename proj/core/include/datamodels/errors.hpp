#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments, shape mismatches, out-of-range indices.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed or corrupted artifact file. Carries the byte offset where
/// decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// A numeric procedure could not produce a meaningful value (e.g. a margin
/// for a single-class model, a degenerate sampling distribution).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dm
