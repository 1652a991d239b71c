#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scalefit/core_model.hpp"
#include "scalefit/regression.hpp"
#include "scalefit/run_record.hpp"

namespace scalefit {

/// Regression summary of one fitting stage. The regression is reported in the
/// stage's own log-space coordinates.
struct StageDiagnostics {
  std::string stage;
  LinearFit regression;
  std::size_t samples_used = 0;
  std::vector<std::string> warnings;
};

/// The converged-loss term (n_c / N)^alpha_n.
struct ConvergedTerm {
  double n_c = 0.0;
  double alpha_n = 0.0;
};

struct ConvergedLawFit {
  ConvergedTerm term;
  StageDiagnostics diagnostics;
};

// OLS of ln L on ln N: slope = -alpha_n, intercept = alpha_n ln n_c.
// Needs two distinct sizes. Losses that do not decrease with size produce a
// warning; a non-positive fitted exponent throws FitFailure.
ConvergedLawFit fit_converged_law(std::span<const ConvergedRun> runs);

struct StepLawOptions {
  WarmupTrim trim;
  // Falls back to the other split when the run lacks this one.
  Split split = Split::test;
};

struct StepLawFit {
  double s_c = 0.0;
  double alpha_s = 0.0;
  StageDiagnostics diagnostics;
};

// OLS of ln(L - C) on ln S for a run trained at (relatively) infinite batch,
// where C is the converged term at the run's size. Any post-trim loss at or
// below C throws InconsistentConstantsError.
StepLawFit fit_step_law(const ConvergedTerm& converged, const RunRecord& run,
                        const StepLawOptions& options = {});

// Mean of the last `tail_fraction` of post-warm-up test samples (train when
// the run has no test split).
ConvergedRun converged_run_from_log(const RunRecord& run,
                                    const WarmupTrim& trim = {},
                                    double tail_fraction = 0.05);

struct ContourPoint {
  std::string run_id;
  double batch_tokens = 0.0;
  double steps = 0.0;
  double tokens = 0.0;
};

struct Contour {
  double loss_target = 0.0;
  std::vector<ContourPoint> points;
};

struct ContourExtraction {
  std::vector<Contour> contours;
  std::vector<std::string> warnings;
};

// First step at which the curve reaches `target`, interpolating loss linearly
// in ln(step) between the bracketing samples. Empty when the target is never
// reached or is already passed at the first sample.
std::optional<double> first_crossing_step(std::span<const TrajectorySample> curve,
                                          double target);

// Runs must share a model size and include at least two distinct batch sizes.
// Targets reached by fewer than two runs are dropped with a warning.
ContourExtraction extract_contours(std::span<const RunRecord> runs,
                                   std::span<const double> targets,
                                   Split split = Split::test);

/// Minimum steps and tokens for one loss level, estimated from a batch scan.
struct ContourFit {
  double loss_target = 0.0;
  double s_min_hat = 0.0;
  double e_min_hat = 0.0;
  // e_min_hat / s_min_hat
  double b_crit_hat = 0.0;
  std::size_t point_count = 0;
  // RMS of the relative step residuals.
  double residual_rms = 0.0;
};

// Fits S = S_min + E_min / B by OLS on the regressor 1/B. This line is the
// trade-off curve (S/S_min - 1)(E/E_min - 1) = 1 rewritten with E = B S.
// Throws FitFailure on a non-positive intercept or slope.
ContourFit fit_contour(double loss_target, std::span<const ContourPoint> points);

struct CriticalBatchOptions {
  // Refines the log-space OLS by Gauss-Newton on relative residuals of
  // B_crit in linear space.
  bool nonlinear_refinement = false;
  // Starting alpha_b for the refinement when the OLS value is outside (0, 0.5).
  double initial_alpha_b = 0.25;
  GaussNewtonOptions gauss_newton;
};

struct CriticalBatchFit {
  double b_star = 0.0;
  double alpha_b = 0.0;
  StageDiagnostics diagnostics;
  bool refined = false;
};

// OLS of ln B_crit on ln L: slope = -1/alpha_b, intercept = ln b_star.
CriticalBatchFit fit_critical_batch_law(std::span<const ContourFit> contours,
                                        const CriticalBatchOptions& options = {});

struct PostCorrectionOptions {
  WarmupTrim trim;
  Split split = Split::test;
  // Analytic pairs are kept only where S / S_min - 1 = B_crit / B lies in
  // [min_ratio, max_ratio]; outside it the ratio is dominated by noise.
  double min_ratio = 0.1;
  double max_ratio = 10.0;
};

struct PostCorrection {
  double b_star = 0.0;
  double alpha_b = 0.0;
  // RMS of ln B_crit residuals over the pooled pairs, for the input and the
  // refined constants.
  double rms_before = 0.0;
  double rms_after = 0.0;
  std::size_t original_pairs = 0;
  std::size_t analytic_pairs = 0;
  std::vector<std::string> warnings;
};

// Every scan sample gives an analytic B_crit: S_min comes from inverting
// L(N, S_min) with the candidate constants, and B_crit = B (S / S_min - 1).
// Those pairs are pooled with the contour pairs and the critical-batch law is
// refit. With no scan runs the input values come back with a warning.
PostCorrection post_correct_batch_law(const ScalingConstants& candidate,
                                      std::span<const ContourFit> contours,
                                      std::span<const RunRecord> scan_runs,
                                      const PostCorrectionOptions& options = {});

struct DataDiagnosis {
  bool relatively_infinite = false;
  // max over steps of (test loss - train loss)
  double max_gap = 0.0;
  double step_at_max_gap = 0.0;
  double threshold = 0.0;
};

// Compares train and test curves after warm-up trimming. The train curve is
// interpolated (linear in ln step) at the test steps it spans.
DataDiagnosis diagnose_infinite_data(const RunRecord& run,
                                     double threshold = 0.01,
                                     const WarmupTrim& trim = {});

struct BatchDiagnosis {
  // Smallest batch whose curve stays within the threshold of the next larger
  // batch; empty when none does.
  std::optional<double> stationary_batch;
  // max_deviation[i]: max |L_i - L_{i+1}| over the shared step range.
  std::vector<double> max_deviation;
  double threshold = 0.0;
};

BatchDiagnosis diagnose_infinite_batch(std::span<const RunRecord> runs,
                                       double threshold = 0.005,
                                       const WarmupTrim& trim = {},
                                       Split split = Split::train);

struct PipelineOptions {
  WarmupTrim trim;
  // Explicit contour loss levels; chosen automatically when empty.
  std::vector<double> contour_targets;
  std::size_t contour_count = 5;
  // EMA applied to the big-batch run and scan runs before fitting.
  std::optional<double> smoothing_half_life;
  Split split = Split::test;
  bool post_correct = true;
  CriticalBatchOptions critical_batch;
  PostCorrectionOptions post_correction;
};

struct FitReport {
  double n_c = 0.0;
  double alpha_n = 0.0;
  double s_c = 0.0;
  double alpha_s = 0.0;
  std::optional<double> b_star;
  std::optional<double> alpha_b;
  // False when no scan runs were given, so b_star / alpha_b are absent.
  bool complete = false;
  std::map<std::string, std::string> meta;

  ConvergedLawFit converged;
  StepLawFit step_law;
  std::vector<ContourFit> contour_fits;
  std::optional<CriticalBatchFit> critical_batch;
  std::optional<PostCorrection> post_correction;
  std::vector<std::string> warnings;

  // Throws ValidationError when the report is incomplete.
  ScalingConstants constants() const;
};

// Loss levels for contour extraction: `count` values evenly spaced in ln L
// strictly inside the loss range covered by every run.
std::vector<double> choose_contour_targets(std::span<const RunRecord> runs,
                                           std::size_t count,
                                           Split split = Split::test);

// Converged law, then step law, then contours and the critical-batch law
// (with optional post-correction). Stage failures are rethrown as StageError.
FitReport fit_full_pipeline(std::span<const ConvergedRun> converged,
                            const RunRecord& big_batch_run,
                            std::span<const RunRecord> scan_runs,
                            const PipelineOptions& options = {});

}  // namespace scalefit
