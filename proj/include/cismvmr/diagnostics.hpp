#pragma once

#include "cismvmr/linalg.hpp"

namespace cismvmr {

inline constexpr double kIllConditioned = 100.0;

/// Univariable instrument strength of a set of regressors for one trait.
struct InstrumentStrength {
  double r_squared = 0.0;
  double f_statistic = 0.0;
  Eigen::Index df1 = 0;
  Eigen::Index df2 = 0;
};

/// F = (R^2 / df1) / ((1 - R^2) / df2).
double f_statistic(double r_squared, Eigen::Index df1, Eigen::Index df2);

/// Least squares of `trait` on the columns of `regressors` plus an
/// intercept; df1 = p and df2 = n - p - 1.
InstrumentStrength regression_strength(const MatrixXd& regressors, const VectorXd& trait);

}  // namespace cismvmr
