#pragma once

#include "cismvmr/linalg.hpp"
#include "cismvmr/random.hpp"

namespace cismvmr {

/// Draws A with i.i.d. Uniform(lo, hi) entries and returns the sample
/// correlation between the columns of A A^T (the R idiom `cor(A %*% t(A))`).
/// The result has unit diagonal and is positive semi-definite with rank at
/// most J - 1, because each column is centred.
MatrixXd gen_correlation_uniform(Eigen::Index J, double lo, double hi, Rng& rng);

/// Correlation matrix from a C-vine of partial correlations.
/// `partial(k, i)` for k < i is the partial correlation of variables k and
/// i given variables 0..k-1; entries on and below the diagonal are ignored.
MatrixXd compose_cvine(const MatrixXd& partial);

/// Random correlation matrix by the C-vine method with Beta-distributed
/// partial correlations (LKJ density with concentration `eta`).
MatrixXd gen_correlation_vine(Eigen::Index J, double eta, Rng& rng);

/// Random correlation matrix by the onion method (LKJ density with
/// concentration `eta`), growing the matrix one variable at a time.
MatrixXd gen_correlation_onion(Eigen::Index J, double eta, Rng& rng);

/// Square-root factor F with F F^T = B. Cholesky is used when it succeeds;
/// otherwise eigenvalues are floored at `floor` first.
MatrixXd mvn_factor(const MatrixXd& b, double floor = 1e-10);

/// Sample correlation between the columns of `x`.
MatrixXd column_correlation(const MatrixXd& x);

}  // namespace cismvmr
