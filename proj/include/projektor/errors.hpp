#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace projektor {

// Base of every error the toolkit throws. Callers that only care about
// "something went wrong in projektor" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

class EmptySampleError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  InsufficientDataError(const std::string& msg, std::size_t source)
      : Error(msg), source_(source) {}
  std::size_t source() const noexcept { return source_; }

 private:
  std::size_t source_;
};

// Operation requires labels (or their absence) and got the other mode.
class ModeError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& msg, double residual)
      : Error(msg), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class InstanceTooLargeError : public Error {
 public:
  using Error::Error;
};

class DegeneracyError : public Error {
 public:
  using Error::Error;
};

class RankDeficiencyError : public Error {
 public:
  using Error::Error;
};

class FitFailureError : public Error {
 public:
  FitFailureError(const std::string& msg, std::vector<double> residual_trace)
      : Error(msg), trace_(std::move(residual_trace)) {}
  const std::vector<double>& residual_trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

class FeasibilityError : public Error {
 public:
  using Error::Error;
};

class UnreachableTargetError : public Error {
 public:
  UnreachableTargetError(const std::string& msg, long best_budget,
                         double best_performance)
      : Error(msg), best_budget_(best_budget), best_perf_(best_performance) {}
  long best_budget() const noexcept { return best_budget_; }
  double best_performance() const noexcept { return best_perf_; }

 private:
  long best_budget_;
  double best_perf_;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

}  // namespace projektor
