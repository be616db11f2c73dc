#include "cismvmr/estimate.hpp"

#include "cismvmr/errors.hpp"

namespace cismvmr {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::MvIvw: return "mv-ivw";
    case Method::MvIvwPca: return "mv-ivw-pca";
    case Method::MvLiml: return "mv-liml";
    case Method::MvLimlPca: return "mv-liml-pca";
  }
  return "unknown";
}

std::optional<Method> parse_method(std::string_view name) {
  for (Method m : {Method::MvIvw, Method::MvIvwPca, Method::MvLiml, Method::MvLimlPca}) {
    if (method_name(m) == name) return m;
  }
  return std::nullopt;
}

Estimate gls_estimate(const MatrixXd& bx, const VectorXd& by, const MatrixXd& weight, Method method) {
  if (bx.rows() < bx.cols()) {
    throw IdentificationError("need at least as many instruments as exposures (" +
                              std::to_string(bx.rows()) + " < " + std::to_string(bx.cols()) + ")");
  }
  SymmetricSolver solver(weight);
  const MatrixXd winv_x = solver.solve(bx);
  MatrixXd info = bx.transpose() * winv_x;
  info = 0.5 * (info + info.transpose()).eval();

  Eigen::LLT<MatrixXd> llt(info);
  if (llt.info() != Eigen::Success || !info.allFinite()) {
    throw RankDeficientDesign("X^T W^-1 X is not positive definite");
  }

  Estimate e;
  e.method = method;
  e.theta = llt.solve(winv_x.transpose() * by);
  e.covariance = spd_inverse(info);
  e.se = e.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  e.n_instruments_used = bx.rows();
  e.condition_number = condition_number(weight).value;
  return e;
}

}  // namespace cismvmr
