#include "scalefit/regression.hpp"

#include <cmath>
#include <numeric>

#include <fmt/core.h>

#include "scalefit/errors.hpp"

namespace scalefit {

LinearFit ordinary_least_squares(std::span<const double> x,
                                 std::span<const double> y) {
  if (x.size() != y.size()) {
    throw InsufficientDataError(
        fmt::format("regression needs paired data ({} x vs {} y)", x.size(), y.size()));
  }
  const std::size_t n = x.size();
  if (n < 2) {
    throw InsufficientDataError(fmt::format("regression needs >= 2 points, got {}", n));
  }
  const double mean_x = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double mean_y = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mean_x;
    const double dy = y[i] - mean_y;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) {
    throw InsufficientDataError("regression needs at least two distinct x values");
  }
  LinearFit fit;
  fit.count = n;
  fit.slope = sxy / sxx;
  fit.intercept = mean_y - fit.slope * mean_x;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - (fit.intercept + fit.slope * x[i]);
    ss_res += r * r;
  }
  fit.residual_std = std::sqrt(ss_res / n);
  fit.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return fit;
}

namespace {

// Solves the small dense system a * x = b by Gaussian
// elimination with partial pivoting. Returns false if singular.
bool solve_dense(std::vector<double> a, std::vector<double> b, std::size_t p,
                 std::vector<double>& x) {
  for (std::size_t col = 0; col < p; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < p; ++r) {
      if (std::abs(a[r * p + col]) > std::abs(a[pivot * p + col])) pivot = r;
    }
    if (a[pivot * p + col] == 0.0 || !std::isfinite(a[pivot * p + col])) return false;
    if (pivot != col) {
      for (std::size_t k = 0; k < p; ++k) std::swap(a[col * p + k], a[pivot * p + k]);
      std::swap(b[col], b[pivot]);
    }
    for (std::size_t r = col + 1; r < p; ++r) {
      const double factor = a[r * p + col] / a[col * p + col];
      for (std::size_t k = col; k < p; ++k) a[r * p + k] -= factor * a[col * p + k];
      b[r] -= factor * b[col];
    }
  }
  x.assign(p, 0.0);
  for (std::size_t i = p; i-- > 0;) {
    double sum = b[i];
    for (std::size_t k = i + 1; k < p; ++k) sum -= a[i * p + k] * x[k];
    x[i] = sum / a[i * p + i];
  }
  return true;
}

double half_sum_squares(const std::vector<double>& r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return 0.5 * s;
}

}  // namespace

GaussNewtonResult gauss_newton(const ResidualFunction& fn,
                               std::vector<double> initial,
                               const GaussNewtonOptions& options) {
  const std::size_t p = initial.size();
  GaussNewtonResult result;
  result.params = std::move(initial);

  std::vector<double> residuals, jacobian;
  fn(result.params, residuals, jacobian);
  const std::size_t m = residuals.size();
  if (m < p) {
    throw InsufficientDataError(
        fmt::format("nonlinear fit needs >= {} residuals, got {}", p, m));
  }
  double cost = half_sum_squares(residuals);
  result.initial_cost = cost;
  double damping = 1e-3;

  std::vector<double> jtj(p * p), jtr(p), step, trial, trial_res, trial_jac;
  for (int it = 0; it < options.max_iterations; ++it) {
    result.iterations = it + 1;
    std::fill(jtj.begin(), jtj.end(), 0.0);
    std::fill(jtr.begin(), jtr.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t a = 0; a < p; ++a) {
        jtr[a] -= jacobian[i * p + a] * residuals[i];
        for (std::size_t b = 0; b < p; ++b) {
          jtj[a * p + b] += jacobian[i * p + a] * jacobian[i * p + b];
        }
      }
    }

    bool accepted = false;
    while (damping < 1e12) {
      std::vector<double> lhs = jtj;
      for (std::size_t a = 0; a < p; ++a) lhs[a * p + a] *= 1.0 + damping;
      if (!solve_dense(lhs, jtr, p, step)) {
        damping *= 10.0;
        continue;
      }
      trial = result.params;
      for (std::size_t a = 0; a < p; ++a) trial[a] += step[a];
      fn(trial, trial_res, trial_jac);
      const double trial_cost = half_sum_squares(trial_res);
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        double step_norm = 0.0, param_norm = 0.0;
        for (std::size_t a = 0; a < p; ++a) {
          step_norm += step[a] * step[a];
          param_norm += trial[a] * trial[a];
        }
        result.params = trial;
        residuals = trial_res;
        jacobian = trial_jac;
        cost = trial_cost;
        damping = std::max(damping * 0.1, 1e-12);
        accepted = true;
        if (std::sqrt(step_norm) <= options.relative_step_tol * std::sqrt(param_norm)) {
          result.converged = true;
        }
        break;
      }
      damping *= 10.0;
    }
    if (!accepted) {
      // No descent direction left at any damping: a stationary point.
      result.converged = true;
    }
    if (result.converged) break;
  }
  result.final_cost = cost;
  return result;
}

}  // namespace scalefit
