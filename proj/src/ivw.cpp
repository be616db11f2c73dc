#include "cismvmr/ivw.hpp"

#include "cismvmr/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace cismvmr {

MatrixXd build_sigma(const SummaryDataset& d) {
  return d.rho.cwiseProduct(d.se_y * d.se_y.transpose());
}

Estimate mv_ivw(const SummaryDataset& d) {
  return gls_estimate(d.beta_x, d.beta_y, build_sigma(d), Method::MvIvw);
}

MatrixXd build_psi(const SummaryDataset& d) {
  const VectorXd w = d.beta_x.cwiseAbs().rowwise().sum().cwiseQuotient(d.se_y);
  return d.rho.cwiseProduct(w * w.transpose());
}

PcaTransform pca_decompose(const MatrixXd& psi) {
  if (psi.rows() != psi.cols()) throw std::invalid_argument("Psi must be square");
  const Eigen::Index J = psi.rows();
  PcaTransform t;
  t.k = J;
  if (J == 0) return t;

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(psi);
  if (es.info() != Eigen::Success) throw Error("eigensolver did not converge");

  // Eigen returns ascending order.
  t.eigenvalues = es.eigenvalues().reverse();
  t.loadings = es.eigenvectors().rowwise().reverse();

  const double clamp = 1e-8 * std::max(1.0, std::abs(t.eigenvalues(0)));
  for (Eigen::Index i = 0; i < J; ++i) {
    if (t.eigenvalues(i) < 0.0 && t.eigenvalues(i) >= -clamp) t.eigenvalues(i) = 0.0;
  }

  for (Eigen::Index c = 0; c < J; ++c) {
    Eigen::Index arg = 0;
    t.loadings.col(c).cwiseAbs().maxCoeff(&arg);
    if (t.loadings(arg, c) < 0.0) t.loadings.col(c) *= -1.0;
  }
  return t;
}

Eigen::Index select_num_components(const VectorXd& eigenvalues, double variance_fraction) {
  if (!(variance_fraction > 0.0 && variance_fraction < 1.0)) {
    throw std::invalid_argument("variance_fraction must lie in (0, 1)");
  }
  if (eigenvalues.size() == 0 || (eigenvalues.array() < 0.0).any()) {
    throw std::invalid_argument("eigenvalues must be nonnegative");
  }
  const double total = eigenvalues.sum();
  if (!(total > 0.0)) throw std::invalid_argument("eigenvalues are all zero");

  double cumulative = 0.0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
    cumulative += eigenvalues(i);
    if (cumulative / total > variance_fraction) return i + 1;
  }
  return eigenvalues.size();
}

TransformedData transform_dataset(const SummaryDataset& d, const PcaTransform& t) {
  if (t.k < 0 || t.k > d.num_variants()) throw std::invalid_argument("component count exceeds J");
  const auto wk = t.retained();
  TransformedData out;
  out.beta_x = wk.transpose() * d.beta_x;
  out.beta_y = wk.transpose() * d.beta_y;
  out.sigma = wk.transpose() * build_sigma(d) * wk;
  out.sigma = 0.5 * (out.sigma + out.sigma.transpose()).eval();
  return out;
}

PcaTransform pca_decompose_centred(const MatrixXd& psi) {
  if (psi.rows() < 2) return pca_decompose(psi);
  const MatrixXd centred = psi.rowwise() - psi.colwise().mean();
  if (centred.cwiseAbs().maxCoeff() <= 1e-12 * psi.cwiseAbs().maxCoeff()) return pca_decompose(psi);
  MatrixXd cov = centred.transpose() * centred / static_cast<double>(psi.rows() - 1);
  cov = 0.5 * (cov + cov.transpose()).eval();
  return pca_decompose(cov);
}

PcaTransform fit_pca_transform(const SummaryDataset& d, const PcaOptions& options) {
  const MatrixXd psi = build_psi(d);
  PcaTransform t = options.basis == PcaBasis::Direct ? pca_decompose(psi) : pca_decompose_centred(psi);
  if (options.n_components) {
    if (*options.n_components < 1 || *options.n_components > d.num_variants()) {
      throw std::invalid_argument("component override must lie in [1, J]");
    }
    t.k = *options.n_components;
  } else {
    t.k = select_num_components(t.eigenvalues, options.variance_fraction);
  }
  return t;
}

Estimate mv_ivw_pca(const SummaryDataset& d, const PcaTransform& transform) {
  if (transform.k < d.num_exposures()) {
    throw TooFewComponents(std::to_string(transform.k) + " components cannot identify " +
                           std::to_string(d.num_exposures()) + " exposures");
  }
  const auto td = transform_dataset(d, transform);
  return gls_estimate(td.beta_x, td.beta_y, td.sigma, Method::MvIvwPca);
}

Estimate mv_ivw_pca(const SummaryDataset& d, const PcaOptions& options) {
  return mv_ivw_pca(d, fit_pca_transform(d, options));
}

}  // namespace cismvmr
