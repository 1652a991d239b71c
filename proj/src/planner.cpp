#include "scalefit/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/core.h>

#include "scalefit/errors.hpp"

namespace scalefit {
namespace {

struct Frontier {
  double log_c_c;
  double alpha_c;
  double log_ratio;  // ln(1 + alpha_n / alpha_s)
};

Frontier frontier(const ScalingConstants& c) {
  c.validate();
  Frontier f;
  f.log_ratio = std::log1p(c.alpha_n / c.alpha_s);
  f.alpha_c = 1.0 / (1.0 / c.alpha_s + 1.0 / c.alpha_b + 1.0 / c.alpha_n);
  f.log_c_c = std::log(6.0) + std::log(c.n_c) + std::log(c.b_star) + std::log(c.s_c) +
              (1.0 / c.alpha_s + 1.0 / c.alpha_n) * f.log_ratio +
              (1.0 / c.alpha_s) * (std::log(c.alpha_s) - std::log(c.alpha_n));
  return f;
}

// Training at the critical batch doubles the minimum compute.
double log_min_compute(double budget_flops) { return std::log(budget_flops) - std::log(2.0); }

double finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v) || !(v > 0.0)) {
    throw DomainError(fmt::format("{} overflows or underflows (got {})", what, v));
  }
  return v;
}

}  // namespace

double final_loss_ratio(const ScalingConstants& c) {
  c.validate();
  return 1.0 + c.alpha_n / c.alpha_s;
}

AllocationPlan optimal_allocation(const ScalingConstants& c, ComputeBudget budget) {
  if (!(budget.flops > 0.0) || !std::isfinite(budget.flops)) {
    throw DomainError(fmt::format("compute budget must be positive, got {}", budget.flops));
  }
  const Frontier f = frontier(c);
  const double log_x = log_min_compute(budget.flops) - f.log_c_c;

  const double log_n = std::log(c.n_c) + (f.alpha_c / c.alpha_n) * log_x +
                       f.log_ratio / c.alpha_n;
  const double log_s_min = f.log_c_c - std::log(6.0) - std::log(c.n_c) -
                           std::log(c.b_star) - f.log_ratio / c.alpha_n +
                           (f.alpha_c / c.alpha_s) * log_x;

  AllocationPlan plan;
  plan.budget_flops = budget.flops;
  plan.min_compute_flops = budget.flops / 2.0;
  plan.c_c = finite_or_throw(std::exp(f.log_c_c), "C_c");
  plan.alpha_c = f.alpha_c;
  plan.n_opt = ModelSize{finite_or_throw(std::exp(log_n), "optimal model size")};
  plan.s_min = StepCount{finite_or_throw(std::exp(log_s_min), "optimal steps")};
  plan.s_opt = StepCount{2.0 * plan.s_min.value};
  plan.loss_converged = LossNats{finite_or_throw(
      std::exp(c.alpha_n * (std::log(c.n_c) - log_n)), "converged loss")};
  plan.loss_final = LossNats{plan.loss_converged.value * std::exp(f.log_ratio)};
  plan.b_schedule = critical_batch(c, plan.loss_final);
  return plan;
}

LossNats budget_constrained_loss(const ScalingConstants& c, ModelSize n,
                                 ComputeBudget budget) {
  const double floor = loss_at_convergence(c, n).value;
  const double tokens_per_step_product = budget.flops / (6.0 * n.value);
  // h(L) = solve_loss(n, s(L), B_crit(L)) - L is strictly decreasing.
  auto h = [&](double loss) {
    const double b = critical_batch(c, LossNats{loss}).value;
    const double s = tokens_per_step_product / b;
    return solve_loss(c, n, StepCount{s}, TokenCount{b}).value - loss;
  };
  double lo = floor;
  double hi = 2.0 * floor;
  for (int i = 0; h(hi) > 0.0; ++i) {
    if (i == 60) throw SolverError("budget-constrained loss: no upper bracket");
    lo = hi;
    hi *= 2.0;
  }
  for (int i = 0; i < 200 && hi - lo > 1e-13 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (h(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return {0.5 * (lo + hi)};
}

AllocationCheck verify_allocation(const ScalingConstants& c, ComputeBudget budget,
                                  const SizeGrid& grid) {
  if (!(grid.n_lo > 0.0) || !(grid.n_hi >= grid.n_lo) || !(grid.cells_per_decade > 0.0)) {
    throw DomainError("size grid needs 0 < n_lo <= n_hi and positive resolution");
  }
  AllocationCheck out;
  out.closed_form = optimal_allocation(c, budget);

  const double decades = std::log10(grid.n_hi / grid.n_lo);
  const auto cells = static_cast<std::size_t>(std::llround(decades * grid.cells_per_decade));
  out.grid_points = cells + 1;
  std::size_t best = 0;
  double best_loss = 0.0;
  double best_n = grid.n_lo;
  for (std::size_t k = 0; k <= cells; ++k) {
    const double n = cells == 0 ? grid.n_lo
                                : grid.n_lo * std::pow(10.0, static_cast<double>(k) /
                                                                 grid.cells_per_decade);
    const double loss = budget_constrained_loss(c, ModelSize{n}, budget).value;
    if (k == 0 || loss < best_loss) {
      best = k;
      best_loss = loss;
      best_n = n;
    }
  }
  out.numeric_n = ModelSize{best_n};
  out.numeric_loss = LossNats{best_loss};
  out.at_grid_edge = cells > 0 && (best == 0 || best == cells);
  out.cells_off = std::abs(std::log10(best_n / out.closed_form.n_opt.value)) *
                  grid.cells_per_decade;
  out.loss_rel_diff = std::abs(best_loss / out.closed_form.loss_final.value - 1.0);
  return out;
}

StepCount min_steps_for_loss(const ScalingConstants& c, ModelSize n, LossNats target) {
  const double floor = loss_at_convergence(c, n).value;
  if (!(target.value > floor) || !std::isfinite(target.value)) {
    throw UnreachableLossError(
        fmt::format("target loss {} is not above the converged loss {:.6g} of an "
                    "n = {:.6g} model",
                    target.value, floor, n.value),
        floor);
  }
  return {std::exp(std::log(c.s_c) - std::log(target.value - floor) / c.alpha_s)};
}

TokenCount min_tokens_for_loss(const ScalingConstants& c, ModelSize n, LossNats target) {
  const StepCount s_min = min_steps_for_loss(c, n, target);
  return min_tokens(s_min, critical_batch(c, target));
}

BudgetForLoss min_budget_for_loss(const ScalingConstants& c, LossNats target) {
  if (!(target.value > 0.0) || !std::isfinite(target.value)) {
    throw DomainError(fmt::format("target loss must be positive, got {}", target.value));
  }
  const Frontier f = frontier(c);
  // ln L_final as a function of ln C, strictly decreasing.
  auto log_final_loss = [&](double log_budget) {
    return -f.alpha_c * (log_budget - std::log(2.0) - f.log_c_c);
  };
  const double goal = std::log(target.value);
  // Keep exp(ln C) representable.
  constexpr double kLogMax = 700.0;
  double lo = f.log_c_c - 1.0;
  double hi = f.log_c_c + 1.0;
  for (double width = 2.0; log_final_loss(lo) < goal || log_final_loss(hi) > goal;
       width *= 2.0) {
    if (lo < -kLogMax && hi > kLogMax) {
      throw DomainError(fmt::format(
          "target loss {} is not achievable with a representable budget", target.value));
    }
    lo = std::max(f.log_c_c - width, -kLogMax - 1.0);
    hi = std::min(f.log_c_c + width, kLogMax + 1.0);
  }
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (log_final_loss(mid) > goal) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  BudgetForLoss out;
  out.budget = ComputeBudget{std::exp(0.5 * (lo + hi))};
  if (!std::isfinite(out.budget.flops) || !(out.budget.flops > 0.0)) {
    throw DomainError(fmt::format(
        "target loss {} is not achievable with a representable budget", target.value));
  }
  out.plan = optimal_allocation(c, out.budget);
  return out;
}

TrajectoryPrediction predict_trajectory(const ScalingConstants& c, ModelSize n,
                                        TokenCount b, std::span<const double> steps) {
  TrajectoryPrediction out{n, b, {}};
  out.points.reserve(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i > 0 && !(steps[i] > steps[i - 1])) {
      throw DomainError("trajectory step grid must be strictly increasing");
    }
    try {
      out.points.push_back({steps[i], solve_loss(c, n, StepCount{steps[i]}, b).value});
    } catch (const SolverError& e) {
      throw SolverError(fmt::format("step {}: {}", steps[i], e.what()));
    }
  }
  return out;
}

BatchRecommendation recommend_batch(const ScalingConstants& c, LossNats loss,
                                    double time_weight) {
  if (!(time_weight >= 0.0) || !std::isfinite(time_weight)) {
    throw DomainError(fmt::format("time weight must be >= 0, got {}", time_weight));
  }
  const double b_crit = critical_batch(c, loss).value;
  BatchRecommendation out;
  if (time_weight == 0.0) {
    out.batch = TokenCount{0.0};
    out.objective = 1.0;
    out.advisory =
        "time weight 0: compute alone is minimized as the batch size goes to zero; "
        "pick the smallest batch the hardware runs efficiently";
    return out;
  }
  const double root_w = std::sqrt(time_weight);
  out.batch = TokenCount{root_w * b_crit};
  out.objective = (1.0 + root_w) * (1.0 + root_w);
  return out;
}

DatasetComparison compare_datasets(
    std::span<const std::pair<std::string, ScalingConstants>> fits, ModelSize n,
    ComputeBudget budget, std::size_t trajectory_points) {
  if (fits.size() < 2) {
    throw InsufficientDataError("dataset comparison needs >= 2 fitted constant sets");
  }
  DatasetComparison out;
  for (const auto& [name, constants] : fits) {
    DatasetEntry entry;
    entry.name = name;
    entry.floor = loss_at_convergence(constants, n);
    entry.plan = optimal_allocation(constants, budget);
    std::vector<double> steps;
    const double last = entry.plan.s_opt.value;
    const std::size_t count = std::max<std::size_t>(trajectory_points, 1);
    for (std::size_t i = 0; i < count; ++i) {
      const double t = count == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(count - 1);
      steps.push_back(std::exp(std::log(std::min(1.0, last)) * (1.0 - t) + std::log(last) * t));
    }
    steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
    entry.trajectory = predict_trajectory(constants, entry.plan.n_opt, entry.plan.b_schedule, steps);
    entry.loss_at_budget = LossNats{entry.trajectory.points.back().loss};
    out.entries.push_back(std::move(entry));
  }
  auto ranking = [&](auto key) {
    std::vector<std::size_t> idx(out.entries.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return key(out.entries[a]) < key(out.entries[b]);
    });
    return idx;
  };
  out.rank_by_floor = ranking([](const DatasetEntry& e) { return e.floor.value; });
  out.rank_by_budget_loss = ranking([](const DatasetEntry& e) { return e.loss_at_budget.value; });
  return out;
}

}  // namespace scalefit
