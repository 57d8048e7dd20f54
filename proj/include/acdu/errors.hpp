// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace acdu {

/// Bad argument values: out-of-range labels, mismatched lengths, invalid sizes.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inconsistent configuration: dimension mismatches, invalid schedules, unknown keys.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation requested in the wrong state (missing checkpoint, duplicate record).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed or incomplete external file.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values encountered mid-run.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace acdu
