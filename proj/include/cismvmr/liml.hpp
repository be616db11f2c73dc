#pragma once

#include "cismvmr/estimate.hpp"
#include "cismvmr/ivw.hpp"
#include "cismvmr/quasi_newton.hpp"
#include "cismvmr/summary_data.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cismvmr {

enum class GradientMode {
  /// Full derivative of Q, including the dependence of Omega on theta.
  Exact,
  /// -2 X^T Omega(theta)^{-1} g(theta): treats Omega as constant in theta.
  Partial,
  /// Central differences of the objective, step 1e-6 (1 + |theta_k|).
  FiniteDifference,
};

struct LimlConfig {
  std::optional<ExposureCorrelation> phi;  // identity when unset
  std::optional<VectorXd> start;           // zeros when unset
  GradientMode gradient_mode = GradientMode::Exact;
  int max_iterations = 500;
  double objective_tolerance = 1e-10;
  double parameter_tolerance = 1e-8;
  /// Also start from +/- the matching IVW estimate and keep the lowest Q.
  bool multi_start = false;
  double variance_fraction = kDefaultVarianceFraction;  // PCA variant only
  std::optional<Eigen::Index> n_components;            // PCA variant only
  PcaBasis pca_basis = PcaBasis::CentredCovariance;     // PCA variant only
};

struct LimlFit {
  Estimate estimate;
  double objective_at_optimum = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string status;
  std::vector<double> trace;  // accepted objective values
};

/// Omega(theta) = Sigma + sum_{k,l} Phi_kl theta_k theta_l (rho o v_kl v_kl^T),
/// where v_kl[j] = sqrt(se_x[j][k] se_x[j][l]). The theta-free pieces are
/// assembled once so evaluation is a weighted sum of fixed matrices.
class OmegaModel {
 public:
  OmegaModel(const SummaryDataset& d, const ExposureCorrelation& phi);

  MatrixXd operator()(const VectorXd& theta) const;

  /// u^T (dOmega/dtheta_k) u for every k.
  VectorXd derivative_quadratic(const VectorXd& theta, const VectorXd& u) const;

  /// Model for W^T Omega(theta) W.
  OmegaModel project(const MatrixXd& w) const;

  Eigen::Index size() const { return base_.rows(); }

 private:
  struct Term {
    Eigen::Index k, l;
    double coefficient;  // Phi_kl, doubled for k != l
    MatrixXd matrix;
  };
  OmegaModel() = default;

  MatrixXd base_;
  std::vector<Term> terms_;
};

/// g(theta) = beta_y - beta_x theta.
VectorXd residual(const SummaryDataset& d, const VectorXd& theta);

MatrixXd build_omega(const SummaryDataset& d, const ExposureCorrelation& phi, const VectorXd& theta);

/// Q(theta) = g^T Omega(theta)^{-1} g. Throws SingularWeightMatrix.
double liml_objective(const SummaryDataset& d, const ExposureCorrelation& phi, const VectorXd& theta);

VectorXd liml_gradient(const SummaryDataset& d, const ExposureCorrelation& phi,
                       const VectorXd& theta, GradientMode mode);

/// Minimizes Q from cfg.start. Covariance is (X^T Omega(theta_hat)^{-1} X)^{-1}.
LimlFit mv_liml(const SummaryDataset& d, const LimlConfig& cfg = {});

/// As mv_liml with g, Omega and beta_x replaced by W_k^T g, W_k^T Omega W_k
/// and W_k^T beta_x. Throws TooFewComponents when k < K.
LimlFit mv_liml_pca(const SummaryDataset& d, const LimlConfig& cfg = {});
LimlFit mv_liml_pca(const SummaryDataset& d, const PcaTransform& transform, const LimlConfig& cfg = {});

}  // namespace cismvmr
