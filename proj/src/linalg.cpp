#include "cismvmr/linalg.hpp"

#include "cismvmr/errors.hpp"

#include <cmath>
#include <limits>

namespace cismvmr {

SymmetricSolver::SymmetricSolver(const MatrixXd& m, const std::string& what) : n_(m.rows()) {
  if (m.rows() != m.cols()) throw SingularWeightMatrix(what + " is not square");
  if (!m.allFinite()) throw SingularWeightMatrix(what + " has non-finite entries");

  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) {
    factor_ = std::move(llt);
    return;
  }

  Eigen::LDLT<MatrixXd> ldlt(m);
  if (ldlt.info() != Eigen::Success) throw SingularWeightMatrix(what + ": factorization failed");
  const VectorXd d = ldlt.vectorD();
  const double scale = d.cwiseAbs().maxCoeff();
  const double tol = static_cast<double>(n_) * std::numeric_limits<double>::epsilon() * scale;
  if (scale == 0.0 || (d.cwiseAbs().array() <= tol).any()) {
    throw SingularWeightMatrix(what + " is singular");
  }
  factor_ = std::move(ldlt);
}

MatrixXd SymmetricSolver::solve(const MatrixXd& rhs) const {
  return std::visit([&](const auto& f) -> MatrixXd { return f.solve(rhs); }, factor_);
}

VectorXd SymmetricSolver::solve(const VectorXd& rhs) const {
  return std::visit([&](const auto& f) -> VectorXd { return f.solve(rhs); }, factor_);
}

double SymmetricSolver::inverse_quadratic(const VectorXd& v) const {
  if (const auto* llt = std::get_if<Eigen::LLT<MatrixXd>>(&factor_)) {
    // ||L^{-1} v||^2 is nonnegative by construction.
    return llt->matrixL().solve(v).squaredNorm();
  }
  return v.dot(solve(v));
}

MatrixXd spd_inverse(const MatrixXd& m) {
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success || !m.allFinite()) {
    throw RankDeficientDesign("information matrix is not positive definite");
  }
  MatrixXd inv = llt.solve(MatrixXd::Identity(m.rows(), m.cols()));
  return 0.5 * (inv + inv.transpose());
}

ConditionNumber condition_number(const MatrixXd& m) {
  ConditionNumber out;
  if (m.size() == 0) return out;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    out.value = std::numeric_limits<double>::infinity();
    out.singular = true;
    return out;
  }
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  const double tol = static_cast<double>(m.rows()) * std::numeric_limits<double>::epsilon() * std::abs(hi);
  if (hi <= 0.0 || lo <= tol) {
    out.value = std::numeric_limits<double>::infinity();
    out.singular = true;
    return out;
  }
  out.value = hi / lo;
  return out;
}

double max_abs_asymmetry(const MatrixXd& m) {
  if (m.rows() != m.cols()) return std::numeric_limits<double>::infinity();
  if (m.size() == 0) return 0.0;
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

}  // namespace cismvmr
