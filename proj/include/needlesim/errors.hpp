#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace needlesim {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the operation's domain (e.g. axial position outside tissue).
class DomainError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

// Inconsistent model input, e.g. a contact that does not lie on the beam.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Newton-Raphson did not converge. Carries the residual history.
class SolverFailure : public Error {
 public:
  SolverFailure(const std::string& what, std::vector<double> residual_trace)
      : Error(what), trace_(std::move(residual_trace)) {}

  const std::vector<double>& residual_trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

// The plant could not be advanced even after bisecting the input increment.
class PlantFault : public Error {
 public:
  using Error::Error;
};

class JacobianFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace needlesim
