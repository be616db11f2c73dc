#pragma once

#include <stdexcept>
#include <string>

namespace cismvmr {

/// Base class for all failures raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input files.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A dataset that violates its invariants.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Fewer instruments (variants or components) than exposures.
class IdentificationError : public Error {
 public:
  using Error::Error;
};

/// Retained principal components cannot identify all exposures.
class TooFewComponents : public IdentificationError {
 public:
  using IdentificationError::IdentificationError;
};

/// Neither Cholesky nor the pivoted LDL^T fallback could factor the
/// weighting matrix.
class SingularWeightMatrix : public Error {
 public:
  using Error::Error;
};

/// The K x K information matrix X^T W^{-1} X is not positive definite.
class RankDeficientDesign : public Error {
 public:
  using Error::Error;
};

}  // namespace cismvmr
