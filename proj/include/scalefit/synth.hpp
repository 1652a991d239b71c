#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scalefit/core_model.hpp"
#include "scalefit/run_record.hpp"

namespace scalefit {

enum class NoiseKind { none, lognormal };

/// Multiplicative log-normal noise: loss * exp(sigma * z), z ~ N(0, 1).
/// Each (seed, stream) pair is an independent sequence of draws; a generated
/// run consumes one stream in sample order.
struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  static NoiseSpec none() { return {}; }
  static NoiseSpec lognormal(double sigma, std::uint64_t seed, std::uint64_t stream = 0) {
    return {NoiseKind::lognormal, sigma, seed, stream};
  }
};

/// Additive loss inflation that decays linearly from `inflation` at step 0 to
/// zero at step `length`.
struct WarmupSpec {
  double length = 0.0;
  double inflation = 0.0;
};

struct RunLabels {
  std::string run_id = "synthetic";
  double context_length = 1024.0;
  std::string dataset_tag = "synthetic";
};

class NoiseStream {
 public:
  explicit NoiseStream(const NoiseSpec& spec);
  // exp(sigma * z) for the next draw, or 1 when noise is off.
  double next_factor();

 private:
  NoiseSpec spec_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

// Steps 1, 2, ..., num_steps (every `every`-th step, always ending at num_steps).
std::vector<double> linear_step_grid(double num_steps, double every = 1.0);

// About `count` integer steps log-spaced on [first, last], deduplicated.
std::vector<double> log_step_grid(double first, double last, std::size_t count);

std::vector<ConvergedRun> gen_converged_suite(const ScalingConstants& c,
                                              std::span<const ModelSize> sizes,
                                              const NoiseSpec& noise = {});

// Loss at each step solves the implicit loss equation; warm-up inflation and
// noise are then applied. Train and test rows are identical.
RunRecord gen_trajectory(const ScalingConstants& c, ModelSize n, TokenCount b,
                         std::span<const double> steps, const NoiseSpec& noise = {},
                         const WarmupSpec& warmup = {}, const RunLabels& labels = {});

// One trajectory per batch size; run i uses noise stream i. Duplicate batch
// sizes or fewer than two batches throw ValidationError.
std::vector<RunRecord> gen_batch_scan(const ScalingConstants& c, ModelSize n,
                                      std::span<const double> batches,
                                      std::span<const double> steps,
                                      const NoiseSpec& noise = {},
                                      const RunLabels& labels = {});

}  // namespace scalefit

namespace scalefit {

/// Layout of a complete fitting fixture: converged runs, one big-batch run and
/// a batch scan, all sized from the generating constants.
struct SuiteSpec {
  // Converged-run sizes; empty means 7 sizes log-spaced on [1e6, 6e7].
  std::vector<double> sizes;
  // Model size of the big-batch run and of the scan.
  double run_n = 1e7;
  // Big batch = margin * B_crit at the run's converged loss.
  double big_batch_margin = 1e9;
  // Runs end once the loss is within this many nats of the converged loss
  // (the scan: its smallest batch).
  double final_excess = 0.3;
  // Scan batches as multiples of B_crit at the final loss.
  std::vector<double> scan_batch_factors = {0.125, 0.25, 0.5, 1.0, 2.0, 4.0};
  // Log-spaced samples per trajectory.
  std::size_t points = 4000;
  NoiseSpec noise;
  // When set, each converged loss is the tail mean of a noisy run trained to
  // convergence at a big batch, rather than one noisy draw.
  bool converged_from_logs = false;
  std::size_t converged_log_points = 2000;
  RunLabels labels;
};

struct SyntheticSuite {
  std::vector<ConvergedRun> converged;
  RunRecord big_batch;
  std::vector<RunRecord> scan;
};

// Noise streams: converged runs use streams 0.., the big-batch run 100, the
// scan 200.. (offset by noise.stream).
SyntheticSuite gen_fit_suite(const ScalingConstants& c, const SuiteSpec& spec = {});

}  // namespace scalefit
