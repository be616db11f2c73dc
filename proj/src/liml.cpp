#include "cismvmr/liml.hpp"

#include "cismvmr/errors.hpp"

#include <cmath>
#include <limits>

namespace cismvmr {

OmegaModel::OmegaModel(const SummaryDataset& d, const ExposureCorrelation& phi) {
  const Eigen::Index K = d.num_exposures();
  if (phi.size() != K) throw std::invalid_argument("Phi must be K x K");
  base_ = build_sigma(d);
  const MatrixXd root = d.se_x.cwiseMax(0.0).cwiseSqrt();
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index l = k; l < K; ++l) {
      const double p = phi.matrix()(k, l);
      if (p == 0.0) continue;
      const VectorXd v = root.col(k).cwiseProduct(root.col(l));
      terms_.push_back({k, l, k == l ? p : 2.0 * p, d.rho.cwiseProduct(v * v.transpose())});
    }
  }
}

MatrixXd OmegaModel::operator()(const VectorXd& theta) const {
  MatrixXd out = base_;
  for (const auto& t : terms_) {
    const double c = t.coefficient * theta(t.k) * theta(t.l);
    if (c != 0.0) out.noalias() += c * t.matrix;
  }
  return out;
}

VectorXd OmegaModel::derivative_quadratic(const VectorXd& theta, const VectorXd& u) const {
  VectorXd out = VectorXd::Zero(theta.size());
  for (const auto& t : terms_) {
    const double q = t.coefficient * u.dot(t.matrix * u);
    out(t.k) += q * theta(t.l);
    out(t.l) += q * theta(t.k);
  }
  return out;
}

OmegaModel OmegaModel::project(const MatrixXd& w) const {
  OmegaModel out;
  auto sym = [](MatrixXd m) { return MatrixXd(0.5 * (m + m.transpose())); };
  out.base_ = sym(w.transpose() * base_ * w);
  out.terms_.reserve(terms_.size());
  for (const auto& t : terms_) {
    out.terms_.push_back({t.k, t.l, t.coefficient, sym(w.transpose() * t.matrix * w)});
  }
  return out;
}

namespace {

struct LimlProblem {
  MatrixXd bx;
  VectorXd by;
  OmegaModel omega;

  double objective(const VectorXd& theta) const {
    SymmetricSolver s(omega(theta), "Omega(theta)");
    return s.inverse_quadratic(by - bx * theta);
  }

  double objective_or_inf(const VectorXd& theta) const {
    try {
      return objective(theta);
    } catch (const SingularWeightMatrix&) {
      return std::numeric_limits<double>::infinity();
    }
  }

  VectorXd gradient(const VectorXd& theta, GradientMode mode) const {
    if (mode != GradientMode::FiniteDifference) {
      SymmetricSolver s(omega(theta), "Omega(theta)");
      const VectorXd u = s.solve(VectorXd(by - bx * theta));
      VectorXd grad = -2.0 * bx.transpose() * u;
      if (mode == GradientMode::Exact) grad -= omega.derivative_quadratic(theta, u);
      return grad;
    }
    VectorXd out(theta.size());
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      const double h = 1e-6 * (1.0 + std::abs(theta(k)));
      VectorXd up = theta, down = theta;
      up(k) += h;
      down(k) -= h;
      out(k) = (objective(up) - objective(down)) / (2.0 * h);
    }
    return out;
  }
};

LimlFit fit(const LimlProblem& problem, const LimlConfig& cfg, const VectorXd& ivw_theta, Method method) {
  const Eigen::Index K = problem.bx.cols();
  if (problem.bx.rows() < K) {
    throw IdentificationError("need at least as many instruments as exposures");
  }

  MinimizeOptions opts;
  opts.max_iterations = cfg.max_iterations;
  opts.parameter_tolerance = cfg.parameter_tolerance;
  opts.objective_tolerance = cfg.objective_tolerance;
  auto f = [&](const VectorXd& t) { return problem.objective_or_inf(t); };
  auto g = [&](const VectorXd& t) { return problem.gradient(t, cfg.gradient_mode); };

  std::vector<VectorXd> starts{cfg.start.value_or(VectorXd::Zero(K))};
  if (starts.front().size() != K) throw std::invalid_argument("start must have length K");
  if (cfg.multi_start && ivw_theta.size() == K) {
    starts.push_back(ivw_theta);
    starts.push_back(-ivw_theta);
  }

  std::optional<MinimizeResult> best;
  for (const auto& s : starts) {
    if (!std::isfinite(problem.objective_or_inf(s))) {
      if (!cfg.multi_start) problem.objective(s);  // rethrows the singular factorization
      continue;
    }
    auto r = minimize_lbfgs(f, g, s, opts);
    if (!best || r.value < best->value) best = std::move(r);
  }
  if (!best) throw SingularWeightMatrix("Omega(theta) singular at every start point");
  if (best->status == "objective not finite near iterate") {
    throw SingularWeightMatrix("Omega(theta) singular throughout the line search");
  }

  const MatrixXd omega_hat = problem.omega(best->x);
  SymmetricSolver s(omega_hat, "Omega(theta_hat)");
  MatrixXd info = problem.bx.transpose() * s.solve(problem.bx);
  info = 0.5 * (info + info.transpose()).eval();

  LimlFit out;
  out.estimate.method = method;
  out.estimate.theta = best->x;
  out.estimate.covariance = spd_inverse(info);
  out.estimate.se = out.estimate.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.estimate.n_instruments_used = problem.bx.rows();
  out.estimate.condition_number = condition_number(omega_hat).value;
  out.objective_at_optimum = best->value;
  out.converged = best->converged;
  out.iterations = best->iterations;
  out.status = best->status;
  out.trace = std::move(best->trace);
  return out;
}

ExposureCorrelation phi_or_identity(const LimlConfig& cfg, Eigen::Index K) {
  if (cfg.phi) {
    if (cfg.phi->size() != K) throw std::invalid_argument("Phi must be K x K");
    return *cfg.phi;
  }
  return ExposureCorrelation::identity(K);
}

}  // namespace

VectorXd residual(const SummaryDataset& d, const VectorXd& theta) {
  return d.beta_y - d.beta_x * theta;
}

MatrixXd build_omega(const SummaryDataset& d, const ExposureCorrelation& phi, const VectorXd& theta) {
  return OmegaModel(d, phi)(theta);
}

double liml_objective(const SummaryDataset& d, const ExposureCorrelation& phi, const VectorXd& theta) {
  LimlProblem p{d.beta_x, d.beta_y, OmegaModel(d, phi)};
  return p.objective(theta);
}

VectorXd liml_gradient(const SummaryDataset& d, const ExposureCorrelation& phi,
                       const VectorXd& theta, GradientMode mode) {
  LimlProblem p{d.beta_x, d.beta_y, OmegaModel(d, phi)};
  return p.gradient(theta, mode);
}

LimlFit mv_liml(const SummaryDataset& d, const LimlConfig& cfg) {
  const Eigen::Index K = d.num_exposures();
  if (d.num_variants() < K) throw IdentificationError("need at least as many variants as exposures");
  LimlProblem p{d.beta_x, d.beta_y, OmegaModel(d, phi_or_identity(cfg, K))};
  VectorXd ivw_theta;
  if (cfg.multi_start) ivw_theta = mv_ivw(d).theta;
  return fit(p, cfg, ivw_theta, Method::MvLiml);
}

LimlFit mv_liml_pca(const SummaryDataset& d, const PcaTransform& transform, const LimlConfig& cfg) {
  const Eigen::Index K = d.num_exposures();
  if (transform.k < K) {
    throw TooFewComponents(std::to_string(transform.k) + " components cannot identify " +
                           std::to_string(K) + " exposures");
  }
  const MatrixXd wk = transform.retained();
  LimlProblem p{wk.transpose() * d.beta_x, wk.transpose() * d.beta_y,
                OmegaModel(d, phi_or_identity(cfg, K)).project(wk)};
  VectorXd ivw_theta;
  if (cfg.multi_start) ivw_theta = mv_ivw_pca(d, transform).theta;
  return fit(p, cfg, ivw_theta, Method::MvLimlPca);
}

LimlFit mv_liml_pca(const SummaryDataset& d, const LimlConfig& cfg) {
  PcaOptions opts{cfg.variance_fraction, cfg.n_components, cfg.pca_basis};
  return mv_liml_pca(d, fit_pca_transform(d, opts), cfg);
}

}  // namespace cismvmr
