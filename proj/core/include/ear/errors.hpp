#pragma once

#include <stdexcept>
#include <string>

namespace ear {

// Configuration or input problems: bad specs, malformed files, missing paths.
// The CLI maps these to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched tensor ranks or axis lengths.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Data-level validation failures: duplicate ids, missing ground truth,
// out-of-range scores. The CLI maps these to exit code 3.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Frame stores that cannot be read: missing frames, undecodable images.
class IngestError : public std::runtime_error {
 public:
  explicit IngestError(const std::string& msg) : std::runtime_error(msg) {}
};

// Aborted training runs (NaN loss and similar), with diagnostics in the message.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ear
