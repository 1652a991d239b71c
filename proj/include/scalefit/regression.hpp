#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace scalefit {

/// Result of an ordinary least-squares line y = intercept + slope * x.
struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  // Root-mean-square of the residuals.
  double residual_std = 0.0;
  std::size_t count = 0;
};

// Throws InsufficientDataError for fewer than two points or zero spread in x.
LinearFit ordinary_least_squares(std::span<const double> x,
                                 std::span<const double> y);

struct GaussNewtonOptions {
  int max_iterations = 100;
  double relative_step_tol = 1e-10;
};

struct GaussNewtonResult {
  std::vector<double> params;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Fills residuals (size m) and the row-major m x p Jacobian for the given
// parameters.
using ResidualFunction = std::function<void(std::span<const double> params,
                                            std::vector<double>& residuals,
                                            std::vector<double>& jacobian)>;

// Damped Gauss-Newton (Levenberg-Marquardt step control) on half the sum of
// squared residuals. Never returns parameters with a higher cost than the
// starting point.
GaussNewtonResult gauss_newton(const ResidualFunction& fn,
                               std::vector<double> initial,
                               const GaussNewtonOptions& options = {});

}  // namespace scalefit
