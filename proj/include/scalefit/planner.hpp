#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scalefit/core_model.hpp"

namespace scalefit {

/// Training compute in FLOPs, C = 6 N B S.
struct ComputeBudget {
  double flops;
};

/// Compute-optimal configuration for a budget.
///
/// The closed-form frontier is stated for the minimum compute
/// C_min = 6 N B_crit S_min. Training at B = B_crit takes S = 2 S_min steps,
/// so a budget of C FLOPs spent at the critical batch buys C_min = C / 2;
/// `s_opt` is the step count at `b_schedule`, and 6 n_opt b_schedule s_opt
/// equals the budget.
struct AllocationPlan {
  ModelSize n_opt{0.0};
  StepCount s_opt{0.0};
  // Critical batch at the final loss.
  TokenCount b_schedule{0.0};
  LossNats loss_final{0.0};
  LossNats loss_converged{0.0};
  double c_c = 0.0;
  double alpha_c = 0.0;
  double budget_flops = 0.0;
  double min_compute_flops = 0.0;
  // Steps the same loss would take at infinite batch.
  StepCount s_min{0.0};
};

AllocationPlan optimal_allocation(const ScalingConstants& c, ComputeBudget budget);

// 1 + alpha_n / alpha_s: final loss over converged loss on the frontier.
double final_loss_ratio(const ScalingConstants& c);

struct SizeGrid {
  double n_lo = 1e3;
  double n_hi = 1e15;
  double cells_per_decade = 64.0;
};

struct AllocationCheck {
  ModelSize numeric_n{0.0};
  LossNats numeric_loss{0.0};
  AllocationPlan closed_form;
  // |log10(numeric_n / closed n_opt)| in grid cells.
  double cells_off = 0.0;
  // |numeric_loss / closed loss_final - 1|
  double loss_rel_diff = 0.0;
  bool at_grid_edge = false;
  std::size_t grid_points = 0;
};

// Loss reached by an n-parameter model that spends the budget at its own
// critical batch: the L solving L = solve_loss(n, C / (6 n B_crit(L)), B_crit(L)).
LossNats budget_constrained_loss(const ScalingConstants& c, ModelSize n,
                                 ComputeBudget budget);

// Minimizes budget_constrained_loss over a log grid of model sizes and
// compares the argmin with the closed form. A single-point grid returns that
// point.
AllocationCheck verify_allocation(const ScalingConstants& c, ComputeBudget budget,
                                  const SizeGrid& grid = {});

// s_c (target - L(N))^(-1/alpha_s). Throws UnreachableLossError when the
// target is not above the converged loss.
StepCount min_steps_for_loss(const ScalingConstants& c, ModelSize n, LossNats target);

// min_steps_for_loss * B_crit(target)
TokenCount min_tokens_for_loss(const ScalingConstants& c, ModelSize n, LossNats target);

struct BudgetForLoss {
  ComputeBudget budget{0.0};
  AllocationPlan plan;
};

// Smallest budget whose optimal allocation ends at `target`, by bisection on
// ln C.
BudgetForLoss min_budget_for_loss(const ScalingConstants& c, LossNats target);

struct TrajectoryPoint {
  double step = 0.0;
  double loss = 0.0;
};

struct TrajectoryPrediction {
  ModelSize n{0.0};
  TokenCount b{0.0};
  std::vector<TrajectoryPoint> points;
};

// solve_loss over a strictly increasing step grid.
TrajectoryPrediction predict_trajectory(const ScalingConstants& c, ModelSize n,
                                        TokenCount b, std::span<const double> steps);

struct BatchRecommendation {
  TokenCount batch{0.0};
  // w (S/S_min) + E/E_min at the recommended batch.
  double objective = 0.0;
  std::string advisory;
};

// Minimizes w (1 + B_crit/B) + (1 + B/B_crit): B = sqrt(w) B_crit(loss).
// w = 1 weighs time and compute equally and gives B_crit.
BatchRecommendation recommend_batch(const ScalingConstants& c, LossNats loss,
                                    double time_weight);

struct DatasetEntry {
  std::string name;
  LossNats floor{0.0};
  AllocationPlan plan;
  LossNats loss_at_budget{0.0};
  TrajectoryPrediction trajectory;
};

struct DatasetComparison {
  std::vector<DatasetEntry> entries;
  // Indices into entries, best (lowest) first; ties keep input order.
  std::vector<std::size_t> rank_by_floor;
  std::vector<std::size_t> rank_by_budget_loss;
};

DatasetComparison compare_datasets(
    std::span<const std::pair<std::string, ScalingConstants>> fits, ModelSize n,
    ComputeBudget budget, std::size_t trajectory_points = 32);

}  // namespace scalefit
