#pragma once

#include <Eigen/Dense>

#include <string>
#include <variant>

namespace cismvmr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Factorization of a symmetric weighting matrix. Cholesky is tried first;
/// when it fails a pivoted LDL^T is used and rejected if any pivot is
/// numerically zero. Throws SingularWeightMatrix when both fail.
class SymmetricSolver {
 public:
  explicit SymmetricSolver(const MatrixXd& m, const std::string& what = "weighting matrix");

  MatrixXd solve(const MatrixXd& rhs) const;
  VectorXd solve(const VectorXd& rhs) const;

  /// Quadratic form v^T M^{-1} v.
  double inverse_quadratic(const VectorXd& v) const;

  bool used_fallback() const { return std::holds_alternative<Eigen::LDLT<MatrixXd>>(factor_); }
  Eigen::Index size() const { return n_; }

 private:
  Eigen::Index n_;
  std::variant<Eigen::LLT<MatrixXd>, Eigen::LDLT<MatrixXd>> factor_;
};

/// Inverse of a small symmetric positive definite matrix via Cholesky.
/// Throws RankDeficientDesign when the matrix is not positive definite.
MatrixXd spd_inverse(const MatrixXd& m);

/// Ratio of extreme eigenvalues. `singular` is set and `value` is +inf when
/// the smallest eigenvalue is not positive relative to the largest.
struct ConditionNumber {
  double value = 1.0;
  bool singular = false;
};

ConditionNumber condition_number(const MatrixXd& m);

double max_abs_asymmetry(const MatrixXd& m);

}  // namespace cismvmr
