#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cismvmr/errors.hpp"
#include "cismvmr/liml.hpp"
#include "cismvmr/pruning.hpp"
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace cismvmr;
using testing::random_dataset;

namespace {

double max_diff(const MatrixXd& a, const MatrixXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

const ExposureCorrelation& identity3() {
  static const ExposureCorrelation phi = ExposureCorrelation::identity(3);
  return phi;
}

/// Direct summation of the weighting matrix, element by element.
MatrixXd omega_oracle(const SummaryDataset& d, const MatrixXd& phi, const VectorXd& theta) {
  const auto J = d.num_variants(), K = d.num_exposures();
  MatrixXd out(J, J);
  for (Eigen::Index a = 0; a < J; ++a) {
    for (Eigen::Index b = 0; b < J; ++b) {
      double v = d.se_y(a) * d.se_y(b) * d.rho(a, b);
      for (Eigen::Index k = 0; k < K; ++k) {
        for (Eigen::Index l = 0; l < K; ++l) {
          v += std::sqrt(d.se_x(a, k) * d.se_x(b, k)) * std::sqrt(d.se_x(a, l) * d.se_x(b, l)) *
               d.rho(a, b) * phi(k, l) * theta(k) * theta(l);
        }
      }
      out(a, b) = v;
    }
  }
  return out;
}

/// Gradient by Richardson extrapolation of central differences.
VectorXd richardson_gradient(const SummaryDataset& d, const ExposureCorrelation& phi, const VectorXd& theta) {
  VectorXd out(theta.size());
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    auto central = [&](double h) {
      VectorXd up = theta, down = theta;
      up(k) += h;
      down(k) -= h;
      return (liml_objective(d, phi, up) - liml_objective(d, phi, down)) / (2 * h);
    };
    const double h = 1e-3 * (1.0 + std::abs(theta(k)));
    out(k) = (4.0 * central(h / 2) - central(h)) / 3.0;
  }
  return out;
}

SummaryDataset no_exposure_error(SummaryDataset d) {
  d.se_x.setZero();
  return d;
}

}  // namespace

TEST_CASE("residual") {
  Rng rng(51);
  const auto d = random_dataset(6, 3, rng);
  CHECK(max_diff(residual(d, VectorXd::Zero(3)), d.beta_y) == 0.0);
  const VectorXd theta = rng.normal_matrix(3, 1);
  const VectorXd g = residual(d, theta);
  for (int j = 0; j < 6; ++j) {
    double v = d.beta_y(j);
    for (int k = 0; k < 3; ++k) v -= d.beta_x(j, k) * theta(k);
    CHECK(g(j) == doctest::Approx(v).epsilon(1e-12));
  }
  auto e = random_dataset(3, 3, rng);
  const VectorXd root = e.beta_x.lu().solve(e.beta_y);
  CHECK(residual(e, root).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("build_omega") {
  Rng rng(52);
  const auto d = random_dataset(5, 3, rng);
  CHECK(build_omega(d, identity3(), VectorXd::Zero(3)) == build_sigma(d));
  CHECK(max_diff(build_omega(no_exposure_error(d), identity3(), rng.normal_matrix(3, 1)), build_sigma(d)) == 0.0);

  MatrixXd phi(3, 3);
  phi << 1, 0.3, -0.2, 0.3, 1, 0.1, -0.2, 0.1, 1;
  const VectorXd theta = rng.normal_matrix(3, 1);
  const MatrixXd got = build_omega(d, ExposureCorrelation(phi), theta);
  CHECK(max_diff(got, omega_oracle(d, phi, theta)) < 1e-15);
  CHECK(max_abs_asymmetry(got) < 1e-18);

  SUBCASE("two variants, one exposure") {
    SummaryDataset s;
    s.variant_ids = {"a", "b"};
    s.exposure_ids = {"x"};
    s.beta_x = (MatrixXd(2, 1) << 0.2, 0.3).finished();
    s.se_x = (MatrixXd(2, 1) << 0.01, 0.04).finished();
    s.beta_y = (VectorXd(2) << 0.1, 0.1).finished();
    s.se_y = (VectorXd(2) << 0.02, 0.05).finished();
    s.rho = (MatrixXd(2, 2) << 1, 0.5, 0.5, 1).finished();
    const MatrixXd o = build_omega(s, ExposureCorrelation::identity(1), VectorXd::Constant(1, 2.0));
    CHECK(o(0, 0) == doctest::Approx(0.02 * 0.02 + 0.01 * 0.01 * 4.0));
    CHECK(o(0, 1) == doctest::Approx(0.02 * 0.05 * 0.5 + 0.01 * 0.04 * 0.5 * 4.0));
    CHECK(o(1, 1) == doctest::Approx(0.05 * 0.05 + 0.04 * 0.04 * 4.0));
  }
}

TEST_CASE("objective") {
  Rng rng(53);
  SUBCASE("single variant at zero") {
    SummaryDataset s;
    s.variant_ids = {"a"};
    s.exposure_ids = {"x"};
    s.beta_x = MatrixXd::Constant(1, 1, 0.2);
    s.se_x = MatrixXd::Constant(1, 1, 0.01);
    s.beta_y = VectorXd::Constant(1, 0.05);
    s.se_y = VectorXd::Constant(1, 0.02);
    s.rho = MatrixXd::Ones(1, 1);
    const auto phi = ExposureCorrelation::identity(1);
    CHECK(liml_objective(s, phi, VectorXd::Zero(1)) == doctest::Approx(0.05 * 0.05 / (0.02 * 0.02)));
    const double t = 0.7;
    const double g = 0.05 - 0.2 * t;
    CHECK(liml_objective(s, phi, VectorXd::Constant(1, t)) ==
          doctest::Approx(g * g / (0.02 * 0.02 + 0.01 * 0.01 * t * t)));
  }
  SUBCASE("explicit inverse oracle") {
    const auto d = random_dataset(4, 3, rng);
    for (int rep = 0; rep < 10; ++rep) {
      const VectorXd theta = rng.normal_matrix(3, 1);
      const VectorXd g = residual(d, theta);
      const double oracle = g.dot(omega_oracle(d, MatrixXd::Identity(3, 3), theta).inverse() * g);
      CHECK(liml_objective(d, identity3(), theta) == doctest::Approx(oracle).epsilon(1e-9));
    }
  }
  SUBCASE("zero at a root") {
    const auto d = random_dataset(3, 3, rng);
    const VectorXd root = d.beta_x.lu().solve(d.beta_y);
    CHECK(std::abs(liml_objective(d, identity3(), root)) < 1e-18);
  }
  SUBCASE("singular weighting matrix") {
    auto d = random_dataset(3, 1, rng);
    d.rho = MatrixXd::Ones(3, 3);
    CHECK_THROWS_AS(liml_objective(d, ExposureCorrelation::identity(1), VectorXd::Zero(1)), SingularWeightMatrix);
  }
}

TEST_CASE("gradient modes") {
  Rng rng(54);
  for (int rep = 0; rep < 5; ++rep) {
    const auto d = random_dataset(8, 3, rng, 0.05);
    for (int i = 0; i < 10; ++i) {
      const VectorXd theta = rng.normal_matrix(3, 1);
      const VectorXd oracle = richardson_gradient(d, identity3(), theta);
      const VectorXd fd = liml_gradient(d, identity3(), theta, GradientMode::FiniteDifference);
      const VectorXd exact = liml_gradient(d, identity3(), theta, GradientMode::Exact);
      const double scale = std::max(1.0, oracle.cwiseAbs().maxCoeff());
      CHECK(max_diff(fd, oracle) < 1e-3 * scale);
      CHECK(max_diff(exact, oracle) < 1e-5 * scale);
    }
  }

  SUBCASE("partial equals the numerical gradient without exposure error") {
    const auto d = no_exposure_error(random_dataset(8, 3, rng));
    const VectorXd theta = rng.normal_matrix(3, 1);
    const VectorXd partial = liml_gradient(d, identity3(), theta, GradientMode::Partial);
    const VectorXd fd = liml_gradient(d, identity3(), theta, GradientMode::FiniteDifference);
    CHECK(max_diff(partial, fd) < 1e-4 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
  }
  SUBCASE("partial omits the weighting-matrix derivative") {
    const auto d = random_dataset(8, 3, rng, 0.1);
    const VectorXd theta = VectorXd::Constant(3, 1.5);
    const VectorXd partial = liml_gradient(d, identity3(), theta, GradientMode::Partial);
    const VectorXd exact = liml_gradient(d, identity3(), theta, GradientMode::Exact);
    CHECK(max_diff(partial, exact) > 1e-3 * exact.cwiseAbs().maxCoeff());
  }
  SUBCASE("all modes vanish at a root") {
    const auto d = random_dataset(3, 3, rng);
    const VectorXd root = d.beta_x.lu().solve(d.beta_y);
    for (auto mode : {GradientMode::Exact, GradientMode::Partial}) {
      CHECK(liml_gradient(d, identity3(), root, mode).cwiseAbs().maxCoeff() < 1e-9);
    }
    CHECK(liml_gradient(d, identity3(), root, GradientMode::FiniteDifference).cwiseAbs().maxCoeff() < 1e-4);
  }
}

TEST_CASE("no exposure error reduces to the GLS estimators") {
  Rng rng(55);
  for (int rep = 0; rep < 10; ++rep) {
    const auto d = no_exposure_error(random_dataset(12, 3, rng));
    for (auto mode : {GradientMode::Exact, GradientMode::Partial}) {
      LimlConfig cfg;
      cfg.gradient_mode = mode;
      const auto liml = mv_liml(d, cfg);
      const auto ivw = mv_ivw(d);
      CHECK(liml.converged);
      CHECK(max_diff(liml.estimate.theta, ivw.theta) < 1e-6);
      CHECK(max_diff(liml.estimate.covariance, ivw.covariance) < 1e-6);

      const auto lp = mv_liml_pca(d, cfg);
      const auto ip = mv_ivw_pca(d);
      CHECK(max_diff(lp.estimate.theta, ip.theta) < 1e-6);
      CHECK(max_diff(lp.estimate.covariance, ip.covariance) < 1e-6);
      CHECK(lp.estimate.n_instruments_used == ip.n_instruments_used);
    }
    // Full components chain back to mv_ivw.
    LimlConfig full;
    full.n_components = d.num_variants();
    CHECK(max_diff(mv_liml_pca(d, full).estimate.theta, mv_ivw(d).theta) < 1e-6);
  }
}

TEST_CASE("exactly identified fits interpolate") {
  Rng rng(56);
  for (int rep = 0; rep < 10; ++rep) {
    const auto d = random_dataset(3, 3, rng);
    const VectorXd root = d.beta_x.lu().solve(d.beta_y);
    LimlConfig cfg;
    MatrixXd phi(3, 3);
    phi << 1, 0.4, 0.2, 0.4, 1, -0.3, 0.2, -0.3, 1;
    if (rep % 2) cfg.phi = ExposureCorrelation(phi);
    const auto fit = mv_liml(d, cfg);
    CHECK(max_diff(fit.estimate.theta, root) < 1e-8 * std::max(1.0, root.cwiseAbs().maxCoeff()));
    CHECK(fit.objective_at_optimum < 1e-12);
  }
}

TEST_CASE("null outcome gives zero") {
  Rng rng(57);
  auto d = random_dataset(10, 3, rng);
  d.beta_y.setZero();
  const auto fit = mv_liml_pca(d);
  CHECK(fit.estimate.theta.cwiseAbs().maxCoeff() == 0.0);
  CHECK(fit.objective_at_optimum == 0.0);
  CHECK(fit.converged);
}

TEST_CASE("optimizer trace and objective sign") {
  Rng rng(58);
  for (int rep = 0; rep < 20; ++rep) {
    const auto d = random_dataset(15, 3, rng, 0.05);
    for (auto mode : {GradientMode::Exact, GradientMode::Partial, GradientMode::FiniteDifference}) {
      LimlConfig cfg;
      cfg.gradient_mode = mode;
      const auto fit = mv_liml(d, cfg);
      REQUIRE_FALSE(fit.trace.empty());
      for (std::size_t i = 1; i < fit.trace.size(); ++i) CHECK(fit.trace[i] <= fit.trace[i - 1] + 1e-12);
      for (double q : fit.trace) CHECK(q >= -1e-10);
      CHECK(fit.objective_at_optimum >= -1e-10);
      CHECK(fit.estimate.se.minCoeff() >= 0.0);
      CHECK(fit.estimate.condition_number >= 1.0);
    }
  }
}

TEST_CASE("exact gradient reaches a stationary point of the objective") {
  Rng rng(59);
  for (int rep = 0; rep < 10; ++rep) {
    const auto d = random_dataset(15, 3, rng, 0.05);
    const auto fit = mv_liml(d);
    CHECK(fit.converged);
    const VectorXd g = richardson_gradient(d, identity3(), fit.estimate.theta);
    CHECK(g.cwiseAbs().maxCoeff() < 1e-4 * std::max(1.0, fit.objective_at_optimum));
  }
}

TEST_CASE("multi-start never does worse") {
  Rng rng(60);
  for (int rep = 0; rep < 10; ++rep) {
    const auto d = random_dataset(10, 3, rng, 0.1);
    LimlConfig single, multi;
    multi.multi_start = true;
    CHECK(mv_liml(d, multi).objective_at_optimum <= mv_liml(d, single).objective_at_optimum + 1e-12);
    CHECK(mv_liml_pca(d, multi).objective_at_optimum <= mv_liml_pca(d, single).objective_at_optimum + 1e-12);
  }
}

TEST_CASE("configuration errors") {
  Rng rng(61);
  const auto d = random_dataset(10, 3, rng);
  LimlConfig cfg;
  cfg.phi = ExposureCorrelation::identity(2);
  CHECK_THROWS_AS(mv_liml(d, cfg), std::invalid_argument);
  LimlConfig start;
  start.start = VectorXd::Zero(2);
  CHECK_THROWS_AS(mv_liml(d, start), std::invalid_argument);
  LimlConfig few;
  few.n_components = 2;
  CHECK_THROWS_AS(mv_liml_pca(d, few), TooFewComponents);
  CHECK_THROWS_AS(mv_liml(random_dataset(2, 3, rng)), IdentificationError);
}

TEST_CASE("permutation invariance") {
  Rng rng(62);
  for (int rep = 0; rep < 5; ++rep) {
    const auto d = random_dataset(12, 3, rng, 0.05);
    std::vector<Eigen::Index> order(12);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    const auto p = subset(d, order);
    const auto a = mv_liml(d), b = mv_liml(p);
    CHECK(max_diff(a.estimate.theta, b.estimate.theta) < 1e-6);
    CHECK(max_diff(a.estimate.se, b.estimate.se) < 1e-6);
    const auto c = mv_liml_pca(d), e = mv_liml_pca(p);
    CHECK(max_diff(c.estimate.theta, e.estimate.theta) < 1e-6);
  }
}
