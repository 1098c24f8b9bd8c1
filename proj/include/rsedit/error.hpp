// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rsedit {

/// Base of every error thrown by the library. `kind()` is a stable short tag
/// used by the CLI and the job service when rendering structured errors.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& message) : Error("invalid-input", message) {}
};

class InvalidConfig : public Error {
 public:
  explicit InvalidConfig(const std::string& message) : Error("invalid-config", message) {}
};

class TrainingDivergence : public Error {
 public:
  TrainingDivergence(std::uint64_t step, const std::string& message)
      : Error("training-divergence", message + " (step " + std::to_string(step) + ")"),
        step_(step) {}

  std::uint64_t step() const noexcept { return step_; }

 private:
  std::uint64_t step_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& message) : Error("parse", message) {}
};

class IncompatibleVersion : public Error {
 public:
  explicit IncompatibleVersion(const std::string& message) : Error("incompatible-version", message) {}
};

class DigestMismatch : public Error {
 public:
  explicit DigestMismatch(const std::string& message) : Error("digest-mismatch", message) {}
};

class GuidanceError : public Error {
 public:
  GuidanceError(int scale, int timestep, const std::string& message)
      : Error("guidance", message + " (scale " + std::to_string(scale) + ", t " +
                              std::to_string(timestep) + ")"),
        scale_(scale),
        timestep_(timestep) {}

  int scale() const noexcept { return scale_; }
  int timestep() const noexcept { return timestep_; }

 private:
  int scale_;
  int timestep_;
};

class Unavailable : public Error {
 public:
  explicit Unavailable(const std::string& message) : Error("unavailable", message) {}
};

class DegenerateEnsemble : public Error {
 public:
  explicit DegenerateEnsemble(const std::string& message) : Error("degenerate-ensemble", message) {}
};

class Cancelled : public Error {
 public:
  Cancelled() : Error("cancelled", "cancelled") {}
};

}  // namespace rsedit
