#include "cismvmr/random_correlation.hpp"

#include <cmath>
#include <stdexcept>

namespace cismvmr {

MatrixXd column_correlation(const MatrixXd& x) {
  const MatrixXd xc = x.rowwise() - x.colwise().mean();
  MatrixXd c = xc.transpose() * xc;
  const VectorXd inv_sd = c.diagonal().cwiseSqrt().cwiseInverse();
  c = inv_sd.asDiagonal() * c * inv_sd.asDiagonal();
  c = 0.5 * (c + c.transpose()).eval();
  c.diagonal().setOnes();
  return c;
}

MatrixXd gen_correlation_uniform(Eigen::Index J, double lo, double hi, Rng& rng) {
  if (!(lo < hi)) throw std::invalid_argument("uniform bounds must satisfy lo < hi");
  if (J < 1) throw std::invalid_argument("J must be positive");
  if (J == 1) return MatrixXd::Ones(1, 1);

  for (int attempt = 0; attempt < 16; ++attempt) {
    MatrixXd a(J, J);
    for (Eigen::Index c = 0; c < J; ++c) {
      for (Eigen::Index r = 0; r < J; ++r) a(r, c) = rng.uniform(lo, hi);
    }
    const MatrixXd gram = a * a.transpose();
    const MatrixXd centred = gram.rowwise() - gram.colwise().mean();
    if ((centred.colwise().squaredNorm().array() > 0.0).all()) return column_correlation(gram);
  }
  throw std::runtime_error("uniform correlation generator produced a constant column repeatedly");
}

MatrixXd compose_cvine(const MatrixXd& partial) {
  const Eigen::Index d = partial.rows();
  MatrixXd s = MatrixXd::Identity(d, d);
  for (Eigen::Index k = 0; k + 1 < d; ++k) {
    for (Eigen::Index i = k + 1; i < d; ++i) {
      double p = partial(k, i);
      for (Eigen::Index l = k - 1; l >= 0; --l) {
        p = p * std::sqrt((1.0 - partial(l, i) * partial(l, i)) * (1.0 - partial(l, k) * partial(l, k))) +
            partial(l, i) * partial(l, k);
      }
      s(k, i) = s(i, k) = p;
    }
  }
  return s;
}

MatrixXd gen_correlation_vine(Eigen::Index J, double eta, Rng& rng) {
  if (J < 2) throw std::invalid_argument("vine generator needs J >= 2");
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
  MatrixXd partial = MatrixXd::Zero(J, J);
  double b = eta + static_cast<double>(J - 1) / 2.0;
  for (Eigen::Index k = 0; k + 1 < J; ++k) {
    b -= 0.5;
    for (Eigen::Index i = k + 1; i < J; ++i) partial(k, i) = 2.0 * rng.beta(b, b) - 1.0;
  }
  return compose_cvine(partial);
}

MatrixXd gen_correlation_onion(Eigen::Index J, double eta, Rng& rng) {
  if (J < 2) throw std::invalid_argument("onion generator needs J >= 2");
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
  double b = eta + static_cast<double>(J - 2) / 2.0;
  MatrixXd r = MatrixXd::Identity(J, J);
  const double r12 = 2.0 * rng.beta(b, b) - 1.0;
  r(0, 1) = r(1, 0) = r12;
  for (Eigen::Index k = 2; k < J; ++k) {
    b -= 0.5;
    const double y = rng.beta(static_cast<double>(k) / 2.0, b);
    VectorXd u(k);
    for (Eigen::Index i = 0; i < k; ++i) u(i) = rng.normal();
    u.normalize();
    const VectorXd w = std::sqrt(y) * u;
    Eigen::LLT<MatrixXd> llt(r.topLeftCorner(k, k));
    const VectorXd z = llt.matrixL() * w;
    r.block(0, k, k, 1) = z;
    r.block(k, 0, 1, k) = z.transpose();
  }
  return r;
}

MatrixXd mvn_factor(const MatrixXd& b, double floor) {
  Eigen::LLT<MatrixXd> llt(b);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(b);
  const VectorXd lambda = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * lambda.cwiseSqrt().asDiagonal();
}

}  // namespace cismvmr
