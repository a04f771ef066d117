#pragma once

#include <stdexcept>
#include <string>

namespace acstate {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or construction input (bad layout, bad field value).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite activation or gradient; the message names the layer or parameter.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Enumeration budget exceeded.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Goal unreachable in the latent graph.
class PlanningError : public Error {
 public:
  using Error::Error;
};

/// Power iteration failed to settle within its iteration cap.
class PeriodicityError : public Error {
 public:
  PeriodicityError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace acstate
