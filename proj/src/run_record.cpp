#include "scalefit/run_record.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/core.h>

#include "scalefit/errors.hpp"

namespace scalefit {

std::string_view to_string(Split split) {
  return split == Split::train ? "train" : "test";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw ValidationError(fmt::format("unknown split '{}'", text));
}

std::vector<TrajectorySample> RunRecord::split_samples(Split split) const {
  std::vector<TrajectorySample> out;
  std::copy_if(samples.begin(), samples.end(), std::back_inserter(out),
               [split](const TrajectorySample& s) { return s.split == split; });
  return out;
}

bool RunRecord::has_split(Split split) const {
  return std::any_of(samples.begin(), samples.end(),
                     [split](const TrajectorySample& s) { return s.split == split; });
}

bool RunRecord::operator==(const RunRecord& other) const {
  return run_id == other.run_id && n.value == other.n.value &&
         batch_tokens.value == other.batch_tokens.value &&
         context_length == other.context_length &&
         dataset_tag == other.dataset_tag && samples == other.samples;
}

void validate_run(const RunRecord& run, std::vector<std::string>* warnings) {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(run.n.value)) {
    throw ValidationError(fmt::format("run '{}': n_params must be positive", run.run_id));
  }
  if (!positive(run.batch_tokens.value)) {
    throw ValidationError(fmt::format("run '{}': batch_tokens must be positive", run.run_id));
  }
  if (run.samples.empty()) {
    throw ValidationError(fmt::format("run '{}' has no samples", run.run_id));
  }
  bool warned_tokens = false;
  for (Split split : {Split::train, Split::test}) {
    const TrajectorySample* prev = nullptr;
    for (std::size_t i = 0; i < run.samples.size(); ++i) {
      const auto& s = run.samples[i];
      if (s.split != split) continue;
      if (!positive(s.step) || !positive(s.tokens)) {
        throw ValidationError(fmt::format(
            "run '{}' sample {}: step and tokens must be positive", run.run_id, i));
      }
      if (!positive(s.loss)) {
        throw ValidationError(fmt::format(
            "run '{}' sample {} (step {}): loss must be positive, got {}",
            run.run_id, i, s.step, s.loss));
      }
      if (prev != nullptr) {
        if (s.step <= prev->step) {
          throw ValidationError(fmt::format(
              "run '{}' sample {}: {} step {} does not increase (previous {})",
              run.run_id, i, to_string(split), s.step, prev->step));
        }
        if (s.tokens <= prev->tokens) {
          throw ValidationError(fmt::format(
              "run '{}' sample {}: tokens do not increase", run.run_id, i));
        }
      }
      const double expected = s.step * run.batch_tokens.value;
      if (warnings != nullptr && !warned_tokens &&
          std::abs(s.tokens - expected) > 1e-3 * expected) {
        warnings->push_back(fmt::format(
            "run '{}' sample {}: tokens {} differ from step x batch_tokens = {} "
            "by more than 0.1%",
            run.run_id, i, s.tokens, expected));
        warned_tokens = true;
      }
      prev = &s;
    }
  }
}

double WarmupTrim::threshold(double final_step) const {
  return std::max(min_step, fraction * final_step);
}

RunRecord trim_warmup(const RunRecord& run, const WarmupTrim& trim) {
  RunRecord out = run;
  if (run.samples.empty()) return out;
  const double final_step =
      std::max_element(run.samples.begin(), run.samples.end(),
                       [](const auto& a, const auto& b) { return a.step < b.step; })
          ->step;
  const double cut = trim.threshold(final_step);
  std::erase_if(out.samples, [cut](const TrajectorySample& s) { return s.step < cut; });
  return out;
}

RunRecord smooth_ema(const RunRecord& run, double half_life_steps) {
  if (!(half_life_steps > 0.0) || !std::isfinite(half_life_steps)) {
    throw ValidationError(fmt::format("EMA half-life must be positive, got {}", half_life_steps));
  }
  RunRecord out = run;
  for (Split split : {Split::train, Split::test}) {
    const TrajectorySample* prev = nullptr;
    double state = 0.0;
    for (auto& s : out.samples) {
      if (s.split != split) continue;
      if (prev == nullptr) {
        state = s.loss;
      } else {
        const double alpha = -std::expm1(-std::log(2.0) * (s.step - prev->step) / half_life_steps);
        state += alpha * (s.loss - state);
      }
      s.loss = state;
      prev = &s;
    }
  }
  return out;
}

RunRecord downsample(const RunRecord& run, std::size_t stride) {
  if (stride == 0) throw ValidationError("downsampling stride must be >= 1");
  RunRecord out = run;
  out.samples.clear();
  std::size_t seen[2] = {0, 0};
  for (const auto& s : run.samples) {
    auto& count = seen[s.split == Split::train ? 0 : 1];
    if (count % stride == 0) out.samples.push_back(s);
    ++count;
  }
  return out;
}

std::vector<TrajectorySample> loss_curve(const RunRecord& run, Split preferred) {
  if (run.has_split(preferred)) return run.split_samples(preferred);
  return run.split_samples(preferred == Split::train ? Split::test : Split::train);
}

}  // namespace scalefit
