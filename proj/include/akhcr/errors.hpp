#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace akhcr {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// shape contract violations (rank/extent mismatches)
struct ShapeError : Error { using Error::Error; };

// NaN/Inf where finite values are required
struct NumericError : Error { using Error::Error; };

// malformed files: images, checkpoints, index files
struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(msg) {}
  FormatError(const std::string& msg, std::int64_t byte_offset)
      : Error(msg + " (at byte " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::int64_t offset = -1;
};

struct IoError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct RangeError : Error { using Error::Error; };

// dataset preconditions: too few samples per class, batch too small, ...
struct DataError : Error { using Error::Error; };

// API misuse, e.g. backward from an infer-mode cache
struct UsageError : Error { using Error::Error; };

}  // namespace akhcr
