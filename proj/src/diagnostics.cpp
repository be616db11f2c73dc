#include "cismvmr/diagnostics.hpp"

#include <limits>
#include <stdexcept>

namespace cismvmr {

double f_statistic(double r_squared, Eigen::Index df1, Eigen::Index df2) {
  if (df1 < 1 || df2 < 1) throw std::invalid_argument("degrees of freedom must be positive");
  if (r_squared >= 1.0) return std::numeric_limits<double>::infinity();
  return (r_squared / static_cast<double>(df1)) / ((1.0 - r_squared) / static_cast<double>(df2));
}

InstrumentStrength regression_strength(const MatrixXd& regressors, const VectorXd& trait) {
  const Eigen::Index n = regressors.rows();
  const Eigen::Index p = regressors.cols();
  if (trait.size() != n) throw std::invalid_argument("trait length does not match regressors");
  if (n <= p + 1) throw std::invalid_argument("not enough observations for the regression");

  const MatrixXd xc = regressors.rowwise() - regressors.colwise().mean();
  const VectorXd yc = trait.array() - trait.mean();
  Eigen::ColPivHouseholderQR<MatrixXd> qr(xc);
  const VectorXd coef = qr.solve(yc);
  const double rss = (yc - xc * coef).squaredNorm();
  const double tss = yc.squaredNorm();

  InstrumentStrength s;
  s.df1 = p;
  s.df2 = n - p - 1;
  s.r_squared = tss > 0.0 ? 1.0 - rss / tss : 0.0;
  s.f_statistic = f_statistic(s.r_squared, s.df1, s.df2);
  return s;
}

}  // namespace cismvmr
