// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ccrt {

// Error taxonomy. Each family maps to a distinct failure surface so callers
// can translate them into exit codes (config -> 2, runtime -> 1) or recovery
// policy (gateway errors degrade, backend faults abort).

/// Bad caller-supplied value (shape mismatch, out-of-range timestep, ...).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration file or option.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk data (hierarchy files, prompt sets).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Referenced artifact does not exist.
class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Stored artifact fails its integrity check.
class CorruptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// LLM provider failure after retries. Callers degrade rather than abort.
class GatewayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model produced non-finite output or violated a backend contract.
class BackendFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged (non-finite loss). The last good checkpoint survives.
class TrainingFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Degenerate dataset (e.g. single-class classifier pool).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Metric could not be computed at all (e.g. every sample unjudged).
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ccrt
