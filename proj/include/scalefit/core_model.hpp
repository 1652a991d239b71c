#pragma once

#include <map>
#include <string>

namespace scalefit {

/// Count of non-embedding parameters.
struct ModelSize {
  double value;
};

/// Optimizer updates. Real-valued so that interpolated contour crossings fit.
struct StepCount {
  double value;
};

/// Processed training tokens (also used for batch sizes in tokens).
struct TokenCount {
  double value;
};

/// Cross-entropy in nats per token.
struct LossNats {
  double value;
};

/// The six constants of the loss model plus free-form provenance.
///
///   L(N)          = (n_c / N)^alpha_n
///   L(N, S_min)   = L(N) + (s_c / S_min)^alpha_s
///   B_crit(L)     = b_star / L^(1 / alpha_b)
///   L(N, S, B)    = L(N) + (s_c / S)^alpha_s * (1 + B_crit(L) / B)^alpha_s
struct ScalingConstants {
  double n_c = 0.0;
  double alpha_n = 0.0;
  double s_c = 0.0;
  double alpha_s = 0.0;
  double b_star = 0.0;
  double alpha_b = 0.0;
  std::map<std::string, std::string> meta;

  // Throws DomainError unless all six values are finite, positive and the
  // exponents lie in (0, 2).
  void validate() const;
};

namespace presets {
// Constants estimated on C4 (context 1024).
ScalingConstants c4();
// Constants estimated on a mixed English/Chinese/code corpus (context 4096).
ScalingConstants mixed_corpus();
}  // namespace presets

struct SolveOptions {
  double tol = 1e-10;
  int max_iterations = 200;
  int max_bracket_doublings = 40;
};

// exp(exponent * (ln numerator - ln denominator)), i.e. (numerator /
// denominator)^exponent without forming the ratio.
double power_ratio(double numerator, double denominator, double exponent);

LossNats loss_at_convergence(const ScalingConstants& c, ModelSize n);

LossNats loss_at_min_steps(const ScalingConstants& c, ModelSize n,
                           StepCount s_min);

TokenCount critical_batch(const ScalingConstants& c, LossNats loss);

// S_min = S / (1 + B_crit / B)
StepCount min_steps_from_steps(StepCount s, TokenCount b, TokenCount b_crit);
StepCount steps_from_min_steps(StepCount s_min, TokenCount b,
                               TokenCount b_crit);

// E_min = S_min * B_crit
TokenCount min_tokens(StepCount s_min, TokenCount b_crit);

// E / E_min on the time/compute trade-off curve
// (S/S_min - 1)(E/E_min - 1) = 1. Requires step_ratio > 1.
double tradeoff_token_ratio(double step_ratio);

// f(L) = L(N) + (s_c/S)^alpha_s (1 + b_star / (B L^(1/alpha_b)))^alpha_s - L.
// Strictly decreasing in L; its root is the loss after S steps at batch B.
double implicit_residual(const ScalingConstants& c, ModelSize n, StepCount s,
                         TokenCount b, LossNats loss_candidate);

// df/dL, always < -1.
double implicit_residual_derivative(const ScalingConstants& c, ModelSize n,
                                    StepCount s, TokenCount b,
                                    LossNats loss_candidate);

// Root of implicit_residual by bisection on [1e-9, 10], doubling the upper
// end while f(hi) > 0. Throws SolverError if no bracket is found.
LossNats solve_loss(const ScalingConstants& c, ModelSize n, StepCount s,
                    TokenCount b, const SolveOptions& options = {});

}  // namespace scalefit
