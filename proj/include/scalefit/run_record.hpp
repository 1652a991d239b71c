#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "scalefit/core_model.hpp"

namespace scalefit {

enum class Split { train, test };

std::string_view to_string(Split split);
// Throws ValidationError for anything other than "train" / "test".
Split parse_split(std::string_view text);

/// One logged observation.
struct TrajectorySample {
  double step = 0.0;
  // Cumulative processed tokens.
  double tokens = 0.0;
  double loss = 0.0;
  Split split = Split::train;

  bool operator==(const TrajectorySample&) const = default;
};

/// A training run with its configuration header. Samples are ordered by step;
/// train and test rows for the same step may both be present.
struct RunRecord {
  std::string run_id;
  ModelSize n{0.0};
  TokenCount batch_tokens{0.0};
  double context_length = 0.0;
  std::string dataset_tag;
  std::vector<TrajectorySample> samples;

  // Samples of one split, in step order.
  std::vector<TrajectorySample> split_samples(Split split) const;
  bool has_split(Split split) const;

  bool operator==(const RunRecord& other) const;
};

// Checks the RunRecord invariants: positive header values, at least one
// sample, positive finite losses, and strictly increasing step and tokens
// within each split. Throws ValidationError naming the offending sample.
// Token counts deviating from step * batch_tokens by more than 0.1% are
// reported through `warnings` when given.
void validate_run(const RunRecord& run,
                  std::vector<std::string>* warnings = nullptr);

// Warm-up rule: samples with step < max(min_step, fraction * final step) are
// dropped. WarmupTrim{0, 0} keeps everything.
struct WarmupTrim {
  double min_step = 100.0;
  double fraction = 0.02;

  double threshold(double final_step) const;
};

// Applies the trim rule; the final step is the largest step in the run.
// May return a run without samples.
RunRecord trim_warmup(const RunRecord& run, const WarmupTrim& trim);

// Exponential moving average of the loss within each split. The weight of a
// sample decays with its distance in steps: alpha = 1 - 2^(-dstep/half_life).
// A constant series is a fixed point.
RunRecord smooth_ema(const RunRecord& run, double half_life_steps);

// Keeps every `stride`-th sample of each split, starting with the first.
RunRecord downsample(const RunRecord& run, std::size_t stride);

// Samples of `preferred` when the run has that split, otherwise of the other
// split.
std::vector<TrajectorySample> loss_curve(const RunRecord& run, Split preferred);

/// A model size paired with its converged (floor) loss.
struct ConvergedRun {
  ModelSize n{0.0};
  LossNats final_loss{0.0};
};

}  // namespace scalefit
