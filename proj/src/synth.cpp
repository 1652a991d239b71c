#include "scalefit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <fmt/core.h>

#include "scalefit/errors.hpp"
#include "scalefit/fitting.hpp"

namespace scalefit {
namespace {

// Generated losses are solved well below the default tolerance so that the
// fitters see the model, not solver error.
constexpr SolveOptions kGeneratorSolve{1e-12, 400, 40};

double warmup_inflation(const WarmupSpec& warmup, double step) {
  if (warmup.length <= 0.0 || step >= warmup.length) return 0.0;
  return warmup.inflation * (1.0 - step / warmup.length);
}

}  // namespace

NoiseStream::NoiseStream(const NoiseSpec& spec) : spec_(spec) {
  if (spec.kind == NoiseKind::lognormal && (!(spec.sigma >= 0.0) || !std::isfinite(spec.sigma))) {
    throw ValidationError(fmt::format("noise sigma must be >= 0, got {}", spec.sigma));
  }
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(spec.seed), hi(spec.seed), lo(spec.stream), hi(spec.stream)};
  engine_.seed(seq);
}

double NoiseStream::next_factor() {
  if (spec_.kind == NoiseKind::none || spec_.sigma == 0.0) return 1.0;
  return std::exp(spec_.sigma * normal_(engine_));
}

std::vector<double> linear_step_grid(double num_steps, double every) {
  if (!(num_steps >= 1.0) || !(every >= 1.0)) {
    throw ValidationError("step grid needs num_steps >= 1 and interval >= 1");
  }
  std::vector<double> steps;
  for (double s = every; s < num_steps; s += every) steps.push_back(std::round(s));
  steps.push_back(std::round(num_steps));
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  return steps;
}

std::vector<double> log_step_grid(double first, double last, std::size_t count) {
  if (!(first >= 1.0) || !(last >= first) || count == 0) {
    throw ValidationError("log step grid needs 1 <= first <= last and count >= 1");
  }
  std::vector<double> steps;
  if (count == 1) return {std::round(last)};
  const double a = std::log(first);
  const double b = std::log(last);
  for (std::size_t i = 0; i < count; ++i) {
    const double s = std::round(std::exp(a + (b - a) * static_cast<double>(i) /
                                                 static_cast<double>(count - 1)));
    if (steps.empty() || s > steps.back()) steps.push_back(s);
  }
  return steps;
}

std::vector<ConvergedRun> gen_converged_suite(const ScalingConstants& c,
                                              std::span<const ModelSize> sizes,
                                              const NoiseSpec& noise) {
  std::vector<ConvergedRun> out;
  out.reserve(sizes.size());
  NoiseStream draws(noise);
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double loss = loss_at_convergence(c, sizes[i]).value * draws.next_factor();
    out.push_back({sizes[i], LossNats{loss}});
  }
  return out;
}

RunRecord gen_trajectory(const ScalingConstants& c, ModelSize n, TokenCount b,
                         std::span<const double> steps, const NoiseSpec& noise,
                         const WarmupSpec& warmup, const RunLabels& labels) {
  if (steps.empty()) throw ValidationError("trajectory needs at least one step");
  if (warmup.length < 0.0 || warmup.inflation < 0.0) {
    throw ValidationError("warm-up length and inflation must be >= 0");
  }
  RunRecord run;
  run.run_id = labels.run_id;
  run.n = n;
  run.batch_tokens = b;
  run.context_length = labels.context_length;
  run.dataset_tag = labels.dataset_tag;
  run.samples.reserve(2 * steps.size());
  NoiseStream draws(noise);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double step = steps[i];
    if (i > 0 && !(step > steps[i - 1])) {
      throw ValidationError("trajectory steps must be strictly increasing");
    }
    double loss = solve_loss(c, n, StepCount{step}, b, kGeneratorSolve).value;
    loss = (loss + warmup_inflation(warmup, step)) * draws.next_factor();
    const double tokens = step * b.value;
    run.samples.push_back({step, tokens, loss, Split::train});
    run.samples.push_back({step, tokens, loss, Split::test});
  }
  return run;
}

std::vector<RunRecord> gen_batch_scan(const ScalingConstants& c, ModelSize n,
                                      std::span<const double> batches,
                                      std::span<const double> steps,
                                      const NoiseSpec& noise, const RunLabels& labels) {
  if (batches.size() < 2) throw ValidationError("batch scan needs >= 2 batch sizes");
  if (std::set<double>(batches.begin(), batches.end()).size() != batches.size()) {
    throw ValidationError("batch scan has duplicate batch sizes");
  }
  std::vector<RunRecord> runs;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    NoiseSpec run_noise = noise;
    run_noise.stream = noise.stream + i;
    RunLabels run_labels = labels;
    run_labels.run_id = fmt::format("{}-b{:.6g}", labels.run_id, batches[i]);
    runs.push_back(gen_trajectory(c, n, TokenCount{batches[i]}, steps, run_noise, {},
                                  run_labels));
  }
  return runs;
}

SyntheticSuite gen_fit_suite(const ScalingConstants& c, const SuiteSpec& spec) {
  c.validate();
  if (!(spec.final_excess > 0.0) || spec.points < 2 || spec.scan_batch_factors.size() < 2) {
    throw ValidationError("suite needs final_excess > 0, >= 2 points and >= 2 scan batches");
  }
  std::vector<double> sizes = spec.sizes;
  if (sizes.empty()) {
    for (int i = 0; i < 7; ++i) sizes.push_back(std::exp(std::log(1e6) + std::log(60.0) * i / 6.0));
  }
  const std::uint64_t base = spec.noise.stream;
  auto stream = [&](std::uint64_t offset) {
    NoiseSpec noise = spec.noise;
    noise.stream = base + offset;
    return noise;
  };
  auto labels = [&](const std::string& suffix) {
    RunLabels l = spec.labels;
    l.run_id = spec.labels.run_id + suffix;
    return l;
  };

  SyntheticSuite suite;
  if (spec.converged_from_logs) {
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      const ModelSize n{sizes[i]};
      const LossNats floor = loss_at_convergence(c, n);
      const double batch = spec.big_batch_margin * critical_batch(c, floor).value;
      // Long enough that the remaining step term is 1e-4 of the floor.
      const double last = c.s_c * std::pow(1e-4 * floor.value, -1.0 / c.alpha_s);
      const auto steps =
          linear_step_grid(last, std::max(1.0, last / static_cast<double>(spec.converged_log_points)));
      const RunRecord run = gen_trajectory(c, n, TokenCount{batch}, steps, stream(i), {},
                                           labels(fmt::format("-conv{}", i)));
      suite.converged.push_back(converged_run_from_log(run));
    }
  } else {
    std::vector<ModelSize> ns;
    for (double n : sizes) ns.push_back(ModelSize{n});
    suite.converged = gen_converged_suite(c, ns, stream(0));
  }

  const ModelSize n{spec.run_n};
  const LossNats floor = loss_at_convergence(c, n);
  const LossNats final_loss{floor.value + spec.final_excess};
  const double s_min_final = c.s_c * std::pow(spec.final_excess, -1.0 / c.alpha_s);

  const double big = spec.big_batch_margin * critical_batch(c, floor).value;
  const auto big_steps = log_step_grid(1.0, std::ceil(s_min_final), spec.points);
  suite.big_batch = gen_trajectory(c, n, TokenCount{big}, big_steps, stream(100), {},
                                   labels("-big"));

  const double b_crit = critical_batch(c, final_loss).value;
  std::vector<double> batches;
  for (double f : spec.scan_batch_factors) batches.push_back(f * b_crit);
  const double smallest = *std::min_element(batches.begin(), batches.end());
  const double scan_last = 1.2 * s_min_final * (1.0 + b_crit / smallest);
  const auto scan_steps = log_step_grid(1.0, std::ceil(scan_last), spec.points);
  suite.scan = gen_batch_scan(c, n, batches, scan_steps, stream(200), labels("-scan"));
  return suite;
}

}  // namespace scalefit
