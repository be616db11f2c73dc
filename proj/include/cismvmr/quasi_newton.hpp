#pragma once

#include "cismvmr/linalg.hpp"

#include <functional>
#include <string>
#include <vector>

namespace cismvmr {

struct MinimizeOptions {
  int max_iterations = 500;
  /// Stop when ||dx||_inf <= parameter_tolerance * (1 + ||x||_inf).
  double parameter_tolerance = 1e-8;
  /// Stop when |df| <= objective_tolerance * |f|.
  double objective_tolerance = 1e-10;
  int memory = 6;
  int max_backtracks = 60;
  double armijo = 1e-4;
};

struct MinimizeResult {
  VectorXd x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string status;
  /// Objective at the start point followed by every accepted iterate.
  std::vector<double> trace;
};

/// Objective may return +inf to mark a point as infeasible; the line search
/// then backtracks.
using ObjectiveFn = std::function<double(const VectorXd&)>;
using GradientFn = std::function<VectorXd(const VectorXd&)>;

/// Limited-memory BFGS with backtracking Armijo line search. The gradient
/// callback is trusted as given, so an approximate gradient steers the
/// search directions while acceptance still requires the objective itself
/// to decrease. Accepted iterates therefore have nonincreasing values.
MinimizeResult minimize_lbfgs(const ObjectiveFn& f, const GradientFn& grad, VectorXd x0,
                              const MinimizeOptions& options = {});

}  // namespace cismvmr
