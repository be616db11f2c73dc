#include "cismvmr/quasi_newton.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace cismvmr {
namespace {

struct Pair {
  VectorXd s;
  VectorXd y;
  double rho;
};

// Two-loop recursion: returns -H g for the implicit inverse Hessian H.
VectorXd lbfgs_direction(const VectorXd& g, const std::deque<Pair>& mem) {
  VectorXd q = g;
  std::vector<double> alpha(mem.size());
  for (std::size_t i = mem.size(); i-- > 0;) {
    alpha[i] = mem[i].rho * mem[i].s.dot(q);
    q -= alpha[i] * mem[i].y;
  }
  if (!mem.empty()) {
    const auto& last = mem.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
  }
  for (std::size_t i = 0; i < mem.size(); ++i) {
    const double beta = mem[i].rho * mem[i].y.dot(q);
    q += (alpha[i] - beta) * mem[i].s;
  }
  return -q;
}

}  // namespace

MinimizeResult minimize_lbfgs(const ObjectiveFn& f, const GradientFn& grad, VectorXd x0,
                              const MinimizeOptions& options) {
  MinimizeResult r;
  r.x = std::move(x0);
  r.value = f(r.x);
  r.evaluations = 1;
  if (!std::isfinite(r.value)) {
    r.status = "objective not finite at start";
    return r;
  }
  r.trace.push_back(r.value);

  VectorXd g = grad(r.x);
  std::deque<Pair> mem;
  bool fresh_start = true;

  for (r.iterations = 0; r.iterations < options.max_iterations; ++r.iterations) {
    if (g.cwiseAbs().maxCoeff() == 0.0) {
      r.converged = true;
      r.status = "stationary";
      return r;
    }

    VectorXd d = lbfgs_direction(g, mem);
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      mem.clear();
      d = -g;
      slope = g.dot(d);
    }
    // Without curvature information, cap the first step at unit length.
    double step = mem.empty() ? std::min(1.0, 1.0 / d.cwiseAbs().maxCoeff()) : 1.0;

    bool accepted = false;
    bool any_finite = false;
    VectorXd x_new;
    double f_new = 0.0;
    for (int bt = 0; bt < options.max_backtracks; ++bt) {
      x_new = r.x + step * d;
      f_new = f(x_new);
      ++r.evaluations;
      if (std::isfinite(f_new)) {
        any_finite = true;
        if (f_new <= r.value + options.armijo * step * slope) {
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }

    if (!accepted) {
      if (!fresh_start) {
        // Retry once along the raw gradient before giving up.
        mem.clear();
        fresh_start = true;
        continue;
      }
      r.status = any_finite ? "line search failed" : "objective not finite near iterate";
      return r;
    }
    fresh_start = false;

    VectorXd g_new = grad(x_new);
    const VectorXd s = x_new - r.x;
    const VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > std::numeric_limits<double>::epsilon() * s.norm() * y.norm()) {
      mem.push_back({s, y, 1.0 / sy});
      if (static_cast<int>(mem.size()) > options.memory) mem.pop_front();
    }

    const double f_old = r.value;
    r.x = std::move(x_new);
    r.value = f_new;
    g = std::move(g_new);
    r.trace.push_back(r.value);

    const double dx = s.cwiseAbs().maxCoeff();
    if (dx <= options.parameter_tolerance * (1.0 + r.x.cwiseAbs().maxCoeff())) {
      r.converged = true;
      r.status = "parameter tolerance";
      ++r.iterations;
      return r;
    }
    if (std::abs(f_old - r.value) <= options.objective_tolerance * std::abs(f_old)) {
      r.converged = true;
      r.status = "objective tolerance";
      ++r.iterations;
      return r;
    }
  }
  r.status = "iteration limit";
  return r;
}

}  // namespace cismvmr
