#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace lidec {

/// Base class for every domain failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A rate that a formula divides by is zero (no light, no energy channel).
class DegenerateRates : public Error {
 public:
  using Error::Error;
};

/// Adaptive step control underflowed or the step budget ran out.
class StiffnessFailure : public Error {
 public:
  using Error::Error;
};

/// Adiabatic elimination of the optical level requested outside the weak-field regime.
class RegimeViolation : public Error {
 public:
  using Error::Error;
};

class ConfigMismatch : public Error {
 public:
  using Error::Error;
};

/// Too few samples, too short a span, or no resolvable oscillation.
class OscillationUnresolved : public Error {
 public:
  using Error::Error;
};

class NoConvergence : public Error {
 public:
  using Error::Error;
};

class OutOfRange : public Error {
 public:
  using Error::Error;
};

/// The requested decoherence cannot be produced within the knob bounds.
class Infeasible : public Error {
 public:
  Infeasible(std::string binding, const std::string& what)
      : Error(what), binding_(std::move(binding)) {}

  /// Name of the constraint that binds, e.g. "i0_max".
  const std::string& binding() const noexcept { return binding_; }

 private:
  std::string binding_;
};

/// Malformed or unknown configuration entry; line is 1-based, 0 when unknown.
class ConfigError : public Error {
 public:
  ConfigError(int line, const std::string& what)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace lidec
