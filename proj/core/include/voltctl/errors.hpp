#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace voltctl {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Topology problems: cycles, disconnected buses, duplicate parents.
class StructuralError : public Error {
  public:
    StructuralError(const std::string& what, int bus) : Error(what), bus_(bus) {}
    int bus() const noexcept { return bus_; }

  private:
    int bus_;
};

/// Input file violates its schema. `where` is a field path or row/column locator.
class SchemaError : public Error {
  public:
    SchemaError(std::string where, const std::string& what)
        : Error(where + ": " + what), where_(std::move(where)) {}
    const std::string& where() const noexcept { return where_; }

  private:
    std::string where_;
};

/// A matrix expected to be positive definite is not.
class CertificateError : public Error {
  public:
    CertificateError(const std::string& what, double min_eig) : Error(what), min_eig_(min_eig) {}
    double min_eig() const noexcept { return min_eig_; }

  private:
    double min_eig_;
};

class PowerFlowError : public Error {
  public:
    PowerFlowError(const std::string& what, std::vector<double> residual_trace)
        : Error(what), trace_(std::move(residual_trace)) {}
    const std::vector<double>& residual_trace() const noexcept { return trace_; }

  private:
    std::vector<double> trace_;
};

/// v <= 0 reached during a power-flow sweep.
class InfeasibleOperatingPoint : public PowerFlowError {
  public:
    using PowerFlowError::PowerFlowError;
};

/// Closed-loop state left the physically meaningful region.
class EnvironmentDiverged : public Error {
  public:
    using Error::Error;
};

/// Non-finite loss or gradient during learning.
class TrainingFault : public Error {
  public:
    using Error::Error;
};

}  // namespace voltctl
