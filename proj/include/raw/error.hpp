#pragma once

#include <stdexcept>
#include <string>

namespace raw {

// Base for every error the library raises. Each subclass maps to one
// failure category; the CLI turns UsageError into exit code 2 and all
// others into exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

// Requested FPR level is below the finite-sample correction for the
// calibration-set size. Carries the smallest level that would be accepted.
class InfeasibleAlphaError : public ConfigError {
 public:
  InfeasibleAlphaError(double alpha, double correction, double min_alpha, std::size_t n);

  double alpha() const { return alpha_; }
  double correction() const { return correction_; }
  double min_feasible_alpha() const { return min_alpha_; }

 private:
  double alpha_;
  double correction_;
  double min_alpha_;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace raw
