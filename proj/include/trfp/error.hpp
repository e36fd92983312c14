#pragma once

#include <stdexcept>
#include <string>

namespace trfp {

// Malformed configuration, shapes that do not line up, bad checkpoint files.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// An API was called in a state where it is not allowed (step after done,
// backward from a non-scalar, sampling an underfilled buffer).
class UsageError : public std::logic_error {
 public:
  explicit UsageError(const std::string& what) : std::logic_error(what) {}
};

// Numerical breakdown during training (NaN/Inf gradients or losses).
class TrainingFault : public std::runtime_error {
 public:
  explicit TrainingFault(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace trfp
