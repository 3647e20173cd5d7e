#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace defacto {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A matrix expected to be positive definite failed factorization.
class NotPositiveDefinite : public Error {
 public:
  explicit NotPositiveDefinite(const std::string& msg) : Error(msg) {}
};

// Iterative fit exhausted its iteration budget.
class NotConverged : public Error {
 public:
  NotConverged(const std::string& msg, std::vector<double> trace)
      : Error(msg), loglik_trace(std::move(trace)) {}
  std::vector<double> loglik_trace;
};

// Fitted covariance lost positive definiteness.
class SingularFit : public Error {
 public:
  explicit SingularFit(const std::string& msg) : Error(msg) {}
};

// Regression design matrix is singular.
class RankDeficient : public Error {
 public:
  explicit RankDeficient(const std::string& msg) : Error(msg) {}
};

// User-supplied matrix or vector has the wrong dimensions.
class ShapeMismatch : public Error {
 public:
  explicit ShapeMismatch(const std::string& msg) : Error(msg) {}
};

// Posterior draw is not possible (e.g. too few subjects for the dimension).
class DrawFailed : public Error {
 public:
  explicit DrawFailed(const std::string& msg) : Error(msg) {}
};

// Root finding target is unattainable.
class NoRoot : public Error {
 public:
  explicit NoRoot(const std::string& msg) : Error(msg) {}
};

// Malformed input file; carries 1-based row and column where known.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, long row = -1, long col = -1)
      : Error(msg), row(row), col(col) {}
  long row;
  long col;
};

// Input violates a dataset or configuration invariant.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Filesystem-level failure (missing file, unwritable output).
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace defacto
