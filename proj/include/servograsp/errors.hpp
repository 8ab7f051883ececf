#pragma once

#include <stdexcept>
#include <string>

namespace sg {

// Error classes map onto the CLI's exit codes: config = 2, io = 3,
// anything else = 4.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file contents (bad magic, bad structure).
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

// Recognized file with an unsupported format version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// File ends before a complete record.
class TruncationError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Scene construction could not place all objects.
class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sg
