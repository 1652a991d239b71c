#include "scalefit/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <fmt/core.h>

#include "scalefit/errors.hpp"

namespace scalefit {
namespace {

// Loss at `step` on a curve, linear in ln(step) between neighbouring samples.
// `step` must lie within the curve's step range.
double interpolate_at_step(std::span<const TrajectorySample> curve, double step) {
  auto it = std::lower_bound(curve.begin(), curve.end(), step,
                             [](const TrajectorySample& s, double v) { return s.step < v; });
  if (it == curve.end()) return curve.back().loss;
  if (it->step == step || it == curve.begin()) return it->loss;
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double t = (std::log(step) - std::log(lo.step)) /
                   (std::log(hi.step) - std::log(lo.step));
  return lo.loss + t * (hi.loss - lo.loss);
}

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e.what());
  }
}

std::size_t distinct_count(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return static_cast<std::size_t>(
      std::unique(values.begin(), values.end()) - values.begin());
}

void require_common_size(std::span<const RunRecord> runs) {
  for (const auto& run : runs) {
    if (run.n.value != runs.front().n.value) {
      throw ValidationError(fmt::format(
          "runs '{}' and '{}' have different model sizes ({} vs {})",
          runs.front().run_id, run.run_id, runs.front().n.value, run.n.value));
    }
  }
}

}  // namespace

ConvergedLawFit fit_converged_law(std::span<const ConvergedRun> runs) {
  std::vector<double> log_n, log_loss;
  for (const auto& r : runs) {
    if (!(r.n.value > 0.0) || !(r.final_loss.value > 0.0)) {
      throw ValidationError(fmt::format("converged run (n = {}, loss = {}) must be positive",
                                        r.n.value, r.final_loss.value));
    }
    log_n.push_back(std::log(r.n.value));
    log_loss.push_back(std::log(r.final_loss.value));
  }
  if (distinct_count(log_n) < 2) {
    throw InsufficientDataError(fmt::format(
        "converged-loss fit needs >= 2 distinct model sizes, got {}", distinct_count(log_n)));
  }

  ConvergedLawFit out;
  out.diagnostics.stage = "converged-law";
  std::vector<ConvergedRun> sorted(runs.begin(), runs.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.n.value < b.n.value; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].n.value > sorted[i - 1].n.value &&
        sorted[i].final_loss.value >= sorted[i - 1].final_loss.value) {
      out.diagnostics.warnings.push_back(fmt::format(
          "final loss does not decrease from n = {} to n = {}", sorted[i - 1].n.value,
          sorted[i].n.value));
    }
  }

  const LinearFit fit = ordinary_least_squares(log_n, log_loss);
  const double alpha_n = -fit.slope;
  if (!(alpha_n > 0.0)) {
    throw FitFailure(fmt::format(
        "fitted alpha_n = {} is not positive; losses do not decrease with size", alpha_n));
  }
  out.term.alpha_n = alpha_n;
  out.term.n_c = std::exp(fit.intercept / alpha_n);
  out.diagnostics.regression = fit;
  out.diagnostics.samples_used = runs.size();
  return out;
}

StepLawFit fit_step_law(const ConvergedTerm& converged, const RunRecord& run,
                        const StepLawOptions& options) {
  const RunRecord trimmed = trim_warmup(run, options.trim);
  const auto curve = loss_curve(trimmed, options.split);
  if (curve.size() < 2) {
    throw InsufficientDataError(fmt::format(
        "step-law fit needs >= 2 samples after warm-up trimming, run '{}' has {}",
        run.run_id, curve.size()));
  }
  const double floor = power_ratio(converged.n_c, run.n.value, converged.alpha_n);
  std::vector<double> log_step, log_excess;
  log_step.reserve(curve.size());
  log_excess.reserve(curve.size());
  for (const auto& s : curve) {
    if (!(s.loss > floor)) {
      throw InconsistentConstantsError(fmt::format(
          "run '{}' step {}: loss {} is not above the converged term {} "
          "(converged-loss estimate too high)",
          run.run_id, s.step, s.loss, floor));
    }
    log_step.push_back(std::log(s.step));
    log_excess.push_back(std::log(s.loss - floor));
  }
  const LinearFit fit = ordinary_least_squares(log_step, log_excess);
  const double alpha_s = -fit.slope;
  if (!(alpha_s > 0.0)) {
    throw FitFailure(fmt::format("fitted alpha_s = {} is not positive", alpha_s));
  }
  StepLawFit out;
  out.alpha_s = alpha_s;
  out.s_c = std::exp(fit.intercept / alpha_s);
  out.diagnostics.stage = "step-law";
  out.diagnostics.regression = fit;
  out.diagnostics.samples_used = curve.size();
  return out;
}

ConvergedRun converged_run_from_log(const RunRecord& run, const WarmupTrim& trim,
                                    double tail_fraction) {
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) {
    throw ValidationError(fmt::format("tail fraction {} outside (0, 1]", tail_fraction));
  }
  const auto curve = loss_curve(trim_warmup(run, trim), Split::test);
  if (curve.empty()) {
    throw InsufficientDataError(
        fmt::format("run '{}' has no samples after warm-up trimming", run.run_id));
  }
  const auto tail = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(tail_fraction * curve.size())));
  double sum = 0.0;
  for (std::size_t i = curve.size() - tail; i < curve.size(); ++i) sum += curve[i].loss;
  return {run.n, LossNats{sum / static_cast<double>(tail)}};
}

std::optional<double> first_crossing_step(std::span<const TrajectorySample> curve,
                                          double target) {
  if (curve.empty()) return std::nullopt;
  if (curve.front().loss <= target) {
    if (curve.front().loss == target) return curve.front().step;
    return std::nullopt;
  }
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto& hi = curve[i];
    if (hi.loss > target) continue;
    if (hi.loss == target) return hi.step;
    const auto& lo = curve[i - 1];
    const double t = (target - lo.loss) / (hi.loss - lo.loss);
    return std::exp(std::log(lo.step) + t * (std::log(hi.step) - std::log(lo.step)));
  }
  return std::nullopt;
}

ContourExtraction extract_contours(std::span<const RunRecord> runs,
                                   std::span<const double> targets, Split split) {
  std::vector<double> batches;
  for (const auto& run : runs) batches.push_back(run.batch_tokens.value);
  if (distinct_count(batches) < 2) {
    throw InsufficientDataError(fmt::format(
        "contour extraction needs runs at >= 2 distinct batch sizes, got {}",
        distinct_count(batches)));
  }
  require_common_size(runs);

  std::vector<std::vector<TrajectorySample>> curves;
  for (const auto& run : runs) curves.push_back(loss_curve(run, split));

  ContourExtraction out;
  for (double target : targets) {
    Contour contour{target, {}};
    for (std::size_t r = 0; r < runs.size(); ++r) {
      const auto step = first_crossing_step(curves[r], target);
      if (!step) {
        out.warnings.push_back(fmt::format("run '{}' never crosses loss {}; skipped",
                                           runs[r].run_id, target));
        continue;
      }
      const double b = runs[r].batch_tokens.value;
      contour.points.push_back({runs[r].run_id, b, *step, b * *step});
    }
    std::vector<double> point_batches;
    for (const auto& p : contour.points) point_batches.push_back(p.batch_tokens);
    if (distinct_count(point_batches) < 2) {
      out.warnings.push_back(fmt::format(
          "loss {} crossed at fewer than 2 batch sizes; contour dropped", target));
      continue;
    }
    out.contours.push_back(std::move(contour));
  }
  return out;
}

ContourFit fit_contour(double loss_target, std::span<const ContourPoint> points) {
  std::vector<double> inv_b, steps;
  for (const auto& p : points) {
    if (!(p.batch_tokens > 0.0) || !(p.steps > 0.0)) {
      throw ValidationError("contour points need positive batch and steps");
    }
    inv_b.push_back(1.0 / p.batch_tokens);
    steps.push_back(p.steps);
  }
  if (distinct_count(inv_b) < 2) {
    throw InsufficientDataError(fmt::format(
        "contour at loss {} needs >= 2 distinct batch sizes", loss_target));
  }
  const LinearFit fit = ordinary_least_squares(inv_b, steps);
  if (!(fit.intercept > 0.0) || !(fit.slope > 0.0)) {
    throw FitFailure(fmt::format(
        "contour at loss {}: fitted S_min = {}, E_min = {} must both be positive",
        loss_target, fit.intercept, fit.slope));
  }
  ContourFit out;
  out.loss_target = loss_target;
  out.s_min_hat = fit.intercept;
  out.e_min_hat = fit.slope;
  out.b_crit_hat = fit.slope / fit.intercept;
  out.point_count = points.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double rel = (fit.intercept + fit.slope * inv_b[i] - steps[i]) / steps[i];
    sum += rel * rel;
  }
  out.residual_rms = std::sqrt(sum / static_cast<double>(steps.size()));
  return out;
}

CriticalBatchFit fit_critical_batch_law(std::span<const ContourFit> contours,
                                        const CriticalBatchOptions& options) {
  std::vector<double> log_loss, log_bcrit;
  for (const auto& c : contours) {
    if (!(c.loss_target > 0.0) || !(c.b_crit_hat > 0.0)) {
      throw ValidationError("contour fits need positive loss and critical batch");
    }
    log_loss.push_back(std::log(c.loss_target));
    log_bcrit.push_back(std::log(c.b_crit_hat));
  }
  if (distinct_count(log_loss) < 2) {
    throw InsufficientDataError(fmt::format(
        "critical-batch fit needs contours at >= 2 distinct losses, got {}",
        distinct_count(log_loss)));
  }
  const LinearFit fit = ordinary_least_squares(log_loss, log_bcrit);
  if (!(fit.slope < 0.0)) {
    throw FitFailure(fmt::format(
        "critical batch does not decrease with loss (slope {}); alpha_b would be "
        "non-positive",
        fit.slope));
  }
  CriticalBatchFit out;
  out.alpha_b = -1.0 / fit.slope;
  out.b_star = std::exp(fit.intercept);
  out.diagnostics.stage = "critical-batch-law";
  out.diagnostics.regression = fit;
  out.diagnostics.samples_used = contours.size();

  if (options.nonlinear_refinement) {
    const double seed_alpha =
        (out.alpha_b > 0.0 && out.alpha_b < 0.5) ? out.alpha_b : options.initial_alpha_b;
    // params: ln b_star, alpha_b; residual: predicted / observed - 1
    auto residuals = [&](std::span<const double> p, std::vector<double>& r,
                         std::vector<double>& jac) {
      r.resize(log_loss.size());
      jac.resize(2 * log_loss.size());
      for (std::size_t i = 0; i < log_loss.size(); ++i) {
        const double e = std::exp(p[0] - log_loss[i] / p[1] - log_bcrit[i]);
        r[i] = e - 1.0;
        jac[2 * i] = e;
        jac[2 * i + 1] = e * log_loss[i] / (p[1] * p[1]);
      }
    };
    const auto gn = gauss_newton(residuals, {std::log(out.b_star), seed_alpha},
                                 options.gauss_newton);
    if (std::isfinite(gn.params[0]) && gn.params[1] > 0.0 && std::isfinite(gn.params[1])) {
      out.b_star = std::exp(gn.params[0]);
      out.alpha_b = gn.params[1];
      out.refined = true;
    } else {
      out.diagnostics.warnings.push_back("nonlinear refinement diverged; OLS values kept");
    }
  }
  return out;
}

PostCorrection post_correct_batch_law(const ScalingConstants& candidate,
                                      std::span<const ContourFit> contours,
                                      std::span<const RunRecord> scan_runs,
                                      const PostCorrectionOptions& options) {
  // The critical-batch pair is what is being corrected, so only its sign is
  // checked; a wild exponent from noisy contours is allowed in.
  for (double v : {candidate.n_c, candidate.alpha_n, candidate.s_c, candidate.alpha_s,
                   candidate.b_star, candidate.alpha_b}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw DomainError("post-correction needs positive, finite candidate constants");
    }
  }
  PostCorrection out;
  out.b_star = candidate.b_star;
  out.alpha_b = candidate.alpha_b;
  if (scan_runs.empty()) {
    out.warnings.push_back("no scan runs; critical-batch constants left unchanged");
    return out;
  }

  std::vector<double> log_loss, log_bcrit;
  for (const auto& c : contours) {
    log_loss.push_back(std::log(c.loss_target));
    log_bcrit.push_back(std::log(c.b_crit_hat));
  }
  out.original_pairs = log_loss.size();

  for (const auto& run : scan_runs) {
    const double floor =
        std::exp(candidate.alpha_n * (std::log(candidate.n_c) - std::log(run.n.value)));
    const double b = run.batch_tokens.value;
    for (const auto& s : loss_curve(trim_warmup(run, options.trim), options.split)) {
      if (!(s.loss > floor)) continue;
      const double s_min =
          std::exp(std::log(candidate.s_c) - std::log(s.loss - floor) / candidate.alpha_s);
      const double ratio = s.step / s_min - 1.0;
      if (!(ratio >= options.min_ratio && ratio <= options.max_ratio)) continue;
      log_loss.push_back(std::log(s.loss));
      log_bcrit.push_back(std::log(b * ratio));
      ++out.analytic_pairs;
    }
  }

  auto rms = [&](double b_star, double alpha_b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < log_loss.size(); ++i) {
      const double r = log_bcrit[i] - (std::log(b_star) - log_loss[i] / alpha_b);
      sum += r * r;
    }
    return log_loss.empty() ? 0.0 : std::sqrt(sum / static_cast<double>(log_loss.size()));
  };
  out.rms_before = rms(candidate.b_star, candidate.alpha_b);
  out.rms_after = out.rms_before;

  if (out.analytic_pairs == 0) {
    out.warnings.push_back("no scan sample yields an analytic critical batch; unchanged");
    return out;
  }
  LinearFit fit;
  try {
    fit = ordinary_least_squares(log_loss, log_bcrit);
  } catch (const InsufficientDataError& e) {
    out.warnings.push_back(fmt::format("post-correction skipped: {}", e.what()));
    return out;
  }
  if (!(fit.slope < 0.0)) {
    out.warnings.push_back(fmt::format(
        "post-correction slope {} is not negative; constants left unchanged", fit.slope));
    return out;
  }
  out.alpha_b = -1.0 / fit.slope;
  out.b_star = std::exp(fit.intercept);
  out.rms_after = rms(out.b_star, out.alpha_b);
  return out;
}

DataDiagnosis diagnose_infinite_data(const RunRecord& run, double threshold,
                                     const WarmupTrim& trim) {
  if (!run.has_split(Split::train) || !run.has_split(Split::test)) {
    throw DiagnosticError(fmt::format(
        "run '{}' needs both train and test samples for the data diagnostic", run.run_id));
  }
  const RunRecord trimmed = trim_warmup(run, trim);
  const auto train = trimmed.split_samples(Split::train);
  const auto test = trimmed.split_samples(Split::test);
  if (train.empty() || test.empty()) {
    throw DiagnosticError(fmt::format(
        "run '{}' lost a split to warm-up trimming", run.run_id));
  }
  DataDiagnosis out;
  out.threshold = threshold;
  out.max_gap = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (const auto& s : test) {
    if (s.step < train.front().step || s.step > train.back().step) continue;
    const double gap = s.loss - interpolate_at_step(train, s.step);
    if (gap > out.max_gap) {
      out.max_gap = gap;
      out.step_at_max_gap = s.step;
    }
    any = true;
  }
  if (!any) {
    throw DiagnosticError(fmt::format(
        "run '{}': train and test samples share no step range", run.run_id));
  }
  out.relatively_infinite = out.max_gap < threshold;
  return out;
}

BatchDiagnosis diagnose_infinite_batch(std::span<const RunRecord> runs, double threshold,
                                       const WarmupTrim& trim, Split split) {
  if (runs.size() < 2) {
    throw InsufficientDataError("batch diagnostic needs >= 2 runs");
  }
  require_common_size(runs);
  for (std::size_t i = 1; i < runs.size(); ++i) {
    if (!(runs[i].batch_tokens.value > runs[i - 1].batch_tokens.value)) {
      throw ValidationError("batch diagnostic needs strictly increasing batch sizes");
    }
  }
  std::vector<std::vector<TrajectorySample>> curves;
  for (const auto& run : runs) curves.push_back(loss_curve(trim_warmup(run, trim), split));

  BatchDiagnosis out;
  out.threshold = threshold;
  for (std::size_t i = 0; i + 1 < runs.size(); ++i) {
    const auto& a = curves[i];
    const auto& b = curves[i + 1];
    double deviation = std::numeric_limits<double>::infinity();
    if (!a.empty() && !b.empty()) {
      const double lo = std::max(a.front().step, b.front().step);
      const double hi = std::min(a.back().step, b.back().step);
      bool any = false;
      double worst = 0.0;
      for (const auto& s : a) {
        if (s.step < lo || s.step > hi) continue;
        worst = std::max(worst, std::abs(s.loss - interpolate_at_step(b, s.step)));
        any = true;
      }
      if (any) deviation = worst;
    }
    out.max_deviation.push_back(deviation);
    if (!out.stationary_batch && deviation < threshold) {
      out.stationary_batch = runs[i].batch_tokens.value;
    }
  }
  return out;
}

ScalingConstants FitReport::constants() const {
  if (!complete || !b_star || !alpha_b) {
    throw ValidationError("fit report is incomplete: b_star and alpha_b were not estimated");
  }
  ScalingConstants c;
  c.n_c = n_c;
  c.alpha_n = alpha_n;
  c.s_c = s_c;
  c.alpha_s = alpha_s;
  c.b_star = *b_star;
  c.alpha_b = *alpha_b;
  c.meta = meta;
  return c;
}

std::vector<double> choose_contour_targets(std::span<const RunRecord> runs,
                                           std::size_t count, Split split) {
  if (count == 0) throw ValidationError("contour count must be >= 1");
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  for (const auto& run : runs) {
    const auto curve = loss_curve(run, split);
    if (curve.empty()) {
      throw InsufficientDataError(fmt::format("run '{}' has no samples", run.run_id));
    }
    const double min_loss =
        std::min_element(curve.begin(), curve.end(),
                         [](const auto& x, const auto& y) { return x.loss < y.loss; })
            ->loss;
    lo = std::max(lo, min_loss);
    hi = std::min(hi, curve.front().loss);
  }
  if (!(lo < hi)) {
    throw InsufficientDataError(fmt::format(
        "scan runs share no common loss range (lowest common loss {}, highest common "
        "start {})",
        lo, hi));
  }
  std::vector<double> targets;
  for (std::size_t i = 1; i <= count; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(count + 1);
    targets.push_back(std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo))));
  }
  return targets;
}

FitReport fit_full_pipeline(std::span<const ConvergedRun> converged,
                            const RunRecord& big_batch_run,
                            std::span<const RunRecord> scan_runs,
                            const PipelineOptions& options) {
  auto prepare = [&](const RunRecord& run) {
    RunRecord out = trim_warmup(run, options.trim);
    if (options.smoothing_half_life && !out.samples.empty()) {
      out = smooth_ema(out, *options.smoothing_half_life);
    }
    return out;
  };

  FitReport report;
  report.converged = run_stage("converged-law", [&] { return fit_converged_law(converged); });
  report.n_c = report.converged.term.n_c;
  report.alpha_n = report.converged.term.alpha_n;

  report.step_law = run_stage("step-law", [&] {
    return fit_step_law(report.converged.term, prepare(big_batch_run),
                        StepLawOptions{options.trim, options.split});
  });
  report.s_c = report.step_law.s_c;
  report.alpha_s = report.step_law.alpha_s;

  if (!big_batch_run.dataset_tag.empty()) report.meta["dataset_tag"] = big_batch_run.dataset_tag;
  if (big_batch_run.context_length > 0.0) {
    report.meta["context_length"] = fmt::format("{}", big_batch_run.context_length);
  }

  for (const auto* diag : {&report.converged.diagnostics, &report.step_law.diagnostics}) {
    report.warnings.insert(report.warnings.end(), diag->warnings.begin(), diag->warnings.end());
  }

  if (scan_runs.empty()) {
    report.complete = false;
    report.warnings.push_back(
        "no batch-size scan runs: b_star and alpha_b not estimated (report incomplete)");
    return report;
  }

  std::vector<RunRecord> scans;
  for (const auto& run : scan_runs) scans.push_back(prepare(run));

  report.contour_fits = run_stage("contours", [&] {
    const std::vector<double> targets =
        options.contour_targets.empty()
            ? choose_contour_targets(scans, options.contour_count, options.split)
            : options.contour_targets;
    auto extraction = extract_contours(scans, targets, options.split);
    report.warnings.insert(report.warnings.end(), extraction.warnings.begin(),
                           extraction.warnings.end());
    std::vector<ContourFit> fits;
    for (const auto& contour : extraction.contours) {
      try {
        fits.push_back(fit_contour(contour.loss_target, contour.points));
      } catch (const FitFailure& e) {
        report.warnings.push_back(fmt::format("contour dropped: {}", e.what()));
      }
    }
    return fits;
  });

  report.critical_batch = run_stage("critical-batch-law", [&] {
    return fit_critical_batch_law(report.contour_fits, options.critical_batch);
  });
  report.b_star = report.critical_batch->b_star;
  report.alpha_b = report.critical_batch->alpha_b;
  report.complete = true;

  if (options.post_correct) {
    report.post_correction = run_stage("post-correction", [&] {
      return post_correct_batch_law(report.constants(), report.contour_fits, scans,
                                    options.post_correction);
    });
    report.b_star = report.post_correction->b_star;
    report.alpha_b = report.post_correction->alpha_b;
    report.warnings.insert(report.warnings.end(), report.post_correction->warnings.begin(),
                           report.post_correction->warnings.end());
  }
  return report;
}

}  // namespace scalefit
