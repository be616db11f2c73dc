#pragma once

#include "cismvmr/linalg.hpp"

#include <optional>
#include <string_view>

namespace cismvmr {

enum class Method { MvIvw, MvIvwPca, MvLiml, MvLimlPca };

std::string_view method_name(Method m);
std::optional<Method> parse_method(std::string_view name);

/// Direct-effect estimates for the K exposures.
struct Estimate {
  VectorXd theta;
  VectorXd se;
  MatrixXd covariance;
  Eigen::Index n_instruments_used = 0;
  /// Condition number of the weighting matrix that was actually inverted.
  double condition_number = 1.0;
  Method method = Method::MvIvw;
};

/// Generalized least squares of `by` on `bx` with error covariance `weight`:
/// theta = (X^T W^{-1} X)^{-1} X^T W^{-1} y, covariance (X^T W^{-1} X)^{-1}.
Estimate gls_estimate(const MatrixXd& bx, const VectorXd& by, const MatrixXd& weight, Method method);

}  // namespace cismvmr
