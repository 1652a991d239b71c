#include "scalefit/core_model.hpp"

#include <cmath>

#include <fmt/core.h>

#include "scalefit/errors.hpp"

namespace scalefit {
namespace {

bool positive_finite(double x) { return std::isfinite(x) && x > 0.0; }

void require_positive(double x, const char* what) {
  if (!positive_finite(x)) {
    throw DomainError(fmt::format("{} must be positive and finite, got {}",
                                  what, x));
  }
}

double require_finite_result(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw DomainError(fmt::format("{} is not finite", what));
  }
  return x;
}

// ln(1 + e^z) without overflow for large z.
double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// ln(B_crit(L) / B) = ln b_star - ln B - ln L / alpha_b
double log_batch_ratio(const ScalingConstants& c, double b, double loss) {
  return std::log(c.b_star) - std::log(b) - std::log(loss) / c.alpha_b;
}

// Everything in f(L) that does not depend on L, hoisted out of the solver loop.
class ImplicitEquation {
 public:
  ImplicitEquation(const ScalingConstants& c, ModelSize n, StepCount s,
                   TokenCount b)
      : alpha_s_(c.alpha_s), alpha_b_(c.alpha_b) {
    require_positive(s.value, "steps");
    require_positive(b.value, "batch");
    floor_ = loss_at_convergence(c, n).value;
    log_step_term_ = c.alpha_s * (std::log(c.s_c) - std::log(s.value));
    log_bstar_over_b_ = std::log(c.b_star) - std::log(b.value);
  }

  double operator()(double loss) const {
    const double z = log_bstar_over_b_ - std::log(loss) / alpha_b_;
    return floor_ + std::exp(log_step_term_ + alpha_s_ * softplus(z)) - loss;
  }

 private:
  double alpha_s_;
  double alpha_b_;
  double floor_ = 0.0;
  double log_step_term_ = 0.0;
  double log_bstar_over_b_ = 0.0;
};

}  // namespace

void ScalingConstants::validate() const {
  const struct {
    double value;
    const char* name;
    bool exponent;
  } fields[] = {{n_c, "n_c", false},      {alpha_n, "alpha_n", true},
                {s_c, "s_c", false},      {alpha_s, "alpha_s", true},
                {b_star, "b_star", false}, {alpha_b, "alpha_b", true}};
  for (const auto& f : fields) {
    if (!positive_finite(f.value)) {
      throw DomainError(fmt::format("constant {} must be positive and finite, got {}",
                                    f.name, f.value));
    }
    if (f.exponent && f.value >= 2.0) {
      throw DomainError(fmt::format("exponent {} = {} outside (0, 2)", f.name, f.value));
    }
  }
}

namespace presets {

ScalingConstants c4() {
  ScalingConstants c;
  c.alpha_n = 0.076;
  c.alpha_s = 0.67;
  c.alpha_b = 0.205;
  c.n_c = 1.5e14;
  c.s_c = 2.6e3;
  c.b_star = 1.7e8;
  c.meta = {{"dataset_tag", "c4"}, {"context_length", "1024"}};
  return c;
}

ScalingConstants mixed_corpus() {
  ScalingConstants c;
  c.alpha_n = 0.0615;
  c.alpha_s = 0.672;
  c.alpha_b = 0.139;
  c.n_c = 4.85e17;
  c.s_c = 1.54e3;
  c.b_star = 2.15e11;
  c.meta = {{"dataset_tag", "mixed"}, {"context_length", "4096"}};
  return c;
}

}  // namespace presets

double power_ratio(double numerator, double denominator, double exponent) {
  return std::exp(exponent * (std::log(numerator) - std::log(denominator)));
}

LossNats loss_at_convergence(const ScalingConstants& c, ModelSize n) {
  c.validate();
  require_positive(n.value, "model size");
  return {require_finite_result(power_ratio(c.n_c, n.value, c.alpha_n),
                                "converged loss")};
}

LossNats loss_at_min_steps(const ScalingConstants& c, ModelSize n,
                           StepCount s_min) {
  require_positive(s_min.value, "minimum steps");
  const double floor = loss_at_convergence(c, n).value;
  return {require_finite_result(
      floor + power_ratio(c.s_c, s_min.value, c.alpha_s), "loss")};
}

TokenCount critical_batch(const ScalingConstants& c, LossNats loss) {
  c.validate();
  require_positive(loss.value, "loss");
  return {require_finite_result(
      std::exp(std::log(c.b_star) - std::log(loss.value) / c.alpha_b),
      "critical batch")};
}

StepCount min_steps_from_steps(StepCount s, TokenCount b, TokenCount b_crit) {
  require_positive(s.value, "steps");
  require_positive(b.value, "batch");
  require_positive(b_crit.value, "critical batch");
  return {s.value / (1.0 + b_crit.value / b.value)};
}

StepCount steps_from_min_steps(StepCount s_min, TokenCount b,
                               TokenCount b_crit) {
  require_positive(s_min.value, "minimum steps");
  require_positive(b.value, "batch");
  require_positive(b_crit.value, "critical batch");
  return {s_min.value * (1.0 + b_crit.value / b.value)};
}

TokenCount min_tokens(StepCount s_min, TokenCount b_crit) {
  require_positive(s_min.value, "minimum steps");
  require_positive(b_crit.value, "critical batch");
  return {s_min.value * b_crit.value};
}

double tradeoff_token_ratio(double step_ratio) {
  if (!(step_ratio > 1.0) || !std::isfinite(step_ratio)) {
    throw DomainError(fmt::format(
        "step ratio S/S_min = {} must exceed 1 (infinite tokens otherwise)",
        step_ratio));
  }
  return 1.0 + 1.0 / (step_ratio - 1.0);
}

double implicit_residual(const ScalingConstants& c, ModelSize n, StepCount s,
                         TokenCount b, LossNats loss_candidate) {
  require_positive(loss_candidate.value, "loss candidate");
  return ImplicitEquation(c, n, s, b)(loss_candidate.value);
}

double implicit_residual_derivative(const ScalingConstants& c, ModelSize n,
                                    StepCount s, TokenCount b,
                                    LossNats loss_candidate) {
  require_positive(loss_candidate.value, "loss candidate");
  require_positive(s.value, "steps");
  require_positive(b.value, "batch");
  require_positive(n.value, "model size");
  c.validate();
  const double loss = loss_candidate.value;
  const double z = log_batch_ratio(c, b.value, loss);
  // -(s_c/S)^a_s (1+x)^(a_s-1) * a_s x / (a_b L) - 1, with x = e^z
  const double log_term = c.alpha_s * (std::log(c.s_c) - std::log(s.value)) +
                          (c.alpha_s - 1.0) * softplus(z) +
                          std::log(c.alpha_s / c.alpha_b) + z - std::log(loss);
  return -std::exp(log_term) - 1.0;
}

LossNats solve_loss(const ScalingConstants& c, ModelSize n, StepCount s,
                    TokenCount b, const SolveOptions& options) {
  if (!(options.tol > 0.0) || options.tol > 1e-3) {
    throw DomainError(fmt::format("solver tolerance {} outside (0, 1e-3]", options.tol));
  }
  const ImplicitEquation f(c, n, s, b);

  double lo = 1e-9;
  double hi = 10.0;
  double f_lo = f(lo);
  if (std::abs(f_lo) <= options.tol) return {lo};
  if (f_lo < 0.0) {
    throw SolverError("implicit loss equation has no root above 1e-9");
  }
  double f_hi = f(hi);
  for (int i = 0; f_hi > 0.0; ++i) {
    if (i == options.max_bracket_doublings) {
      throw SolverError(fmt::format(
          "no sign change of the implicit residual below L = {} "
          "(constants look pathological)",
          hi));
    }
    lo = hi;
    hi *= 2.0;
    f_hi = f(hi);
  }
  if (std::abs(f_hi) <= options.tol) return {hi};

  for (int i = 0; i < options.max_iterations; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) {
      // Bracket collapsed to adjacent doubles; the root is not representable
      // more closely than this.
      return {std::abs(f(lo)) < std::abs(f(hi)) ? lo : hi};
    }
    const double f_mid = f(mid);
    if (std::abs(f_mid) <= options.tol) return {mid};
    if (f_mid > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  throw SolverError(fmt::format(
      "bisection did not reach tolerance {} within {} iterations", options.tol,
      options.max_iterations));
}

}  // namespace scalefit
