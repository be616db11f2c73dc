#pragma once

#include "cismvmr/estimate.hpp"
#include "cismvmr/summary_data.hpp"

#include <optional>

namespace cismvmr {

inline constexpr double kDefaultVarianceFraction = 0.99;

/// Outcome-association covariance: Sigma_ab = se_y[a] se_y[b] rho[a][b].
MatrixXd build_sigma(const SummaryDataset& d);

/// Multivariable inverse-variance weighted estimate (fixed-effect GLS with
/// weighting matrix Sigma). Requires J >= K.
Estimate mv_ivw(const SummaryDataset& d);

/// Association-weighted correlation matrix whose principal components
/// define the instruments:
///   Psi_ab = (sum_k |bx[a][k]|)(sum_k |bx[b][k]|) / (se_y[a] se_y[b]) rho[a][b].
MatrixXd build_psi(const SummaryDataset& d);

/// Symmetric eigendecomposition Psi = W diag(lambda) W^T.
struct PcaTransform {
  MatrixXd loadings;     // J x J, columns by descending eigenvalue
  VectorXd eigenvalues;  // nonincreasing
  Eigen::Index k = 0;    // retained components

  auto retained() const { return loadings.leftCols(k); }
};

/// Eigenvalues are sorted in descending order; small negative roundoff
/// (relative to the largest eigenvalue) is clamped to zero. Each column
/// is signed so that its largest-magnitude entry is positive. `k` is set
/// to J.
PcaTransform pca_decompose(const MatrixXd& psi);

/// Smallest k whose leading eigenvalues explain strictly more than
/// `variance_fraction` of the total.
Eigen::Index select_num_components(const VectorXd& eigenvalues, double variance_fraction);

struct TransformedData {
  MatrixXd beta_x;  // k x K
  VectorXd beta_y;  // k
  MatrixXd sigma;   // k x k
};

TransformedData transform_dataset(const SummaryDataset& d, const PcaTransform& t);

/// Eigenvectors of the column-centred covariance of Psi (principal
/// components of Psi treated as a data matrix). Falls back to
/// pca_decompose(psi) when the centred columns vanish, e.g. for J = 1.
PcaTransform pca_decompose_centred(const MatrixXd& psi);

enum class PcaBasis {
  /// Principal components of the rows of Psi (centred columns).
  CentredCovariance,
  /// Eigenvectors of Psi itself.
  Direct,
};

struct PcaOptions {
  double variance_fraction = kDefaultVarianceFraction;
  std::optional<Eigen::Index> n_components;  // overrides variance_fraction
  PcaBasis basis = PcaBasis::CentredCovariance;
};

/// Builds Psi from `d`, decomposes it and sets k from the options.
PcaTransform fit_pca_transform(const SummaryDataset& d, const PcaOptions& options);

/// MV-IVW on principal-component instruments. Throws TooFewComponents when
/// fewer than K components are retained.
Estimate mv_ivw_pca(const SummaryDataset& d, const PcaOptions& options = {});
Estimate mv_ivw_pca(const SummaryDataset& d, const PcaTransform& transform);

}  // namespace cismvmr
