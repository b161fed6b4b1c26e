#pragma once

// Token-timestep allocation: the per-token schedule policies, gradient-derived
// importance scores, the budgeted noise-allocation solver and the mapping from
// a simplex schedule to its induced uniform-state discrete schedule.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tta/diffusion.hpp"
#include "tta/rng.hpp"
#include "tta/tensor.hpp"

namespace tta {

enum class PolicyKind { constant, linear, backward_linear, random, fixed_zero, fixed_T, adaptive };

std::string to_string(PolicyKind kind);
PolicyKind parse_policy_kind(const std::string& name);

struct SchedulePolicy {
  PolicyKind kind = PolicyKind::constant;
  double alpha_smooth = 0.6;  // adaptive only
  std::uint64_t seed = 0;     // random only

  void validate() const;
  std::string to_json() const;
  static SchedulePolicy from_json(const std::string& text);
};

/// Per-token gradient magnitudes and their min-max normalization.
struct ImportanceScores {
  std::vector<double> raw;
  std::vector<double> normalized;

  /// Indices of the k largest raw scores, largest first; ties go to the lower index.
  std::vector<int> top_k(std::size_t k) const;
};

/// Normalizes to [0, 1]; when every score is equal all entries become 0.5.
ImportanceScores normalize_scores(std::vector<double> raw);

/// Euclidean norm of each gradient row, then normalize_scores.
ImportanceScores importance_from_gradients(const ad::Tensor& grad);

/// Per-token plan at global timestep t for a length-n sequence. `scores` is
/// required by the adaptive kind; `rng` is consumed by the random kind only.
/// Entries are clamped to [0, T].
TimestepPlan allocate(const SchedulePolicy& policy, int t, int T, std::size_t n, const ImportanceScores* scores,
                      Rng& rng);

struct AllocationProblem {
  std::vector<double> weights;  // b_i >= 0
  double budget = 0.0;          // sum of variances C
  double var_min = 0.0;
  double var_max = 1.0;
};

/// Minimizes sum b_i s_i subject to sum s_i = C and var_min <= s_i <= var_max.
/// Variance is handed out to the smallest weights first (ties by index); equal
/// weights return the uniform split C/n.
std::vector<double> solve_budgeted_allocation(const AllocationProblem& problem);

double allocation_objective(const AllocationProblem& problem, const std::vector<double>& variances);

struct DualityPoint {
  double alpha_bar = 0.0;
  double alpha_tilde = 0.0;
  double alpha_disc = 0.0;
  double std_error = 0.0;  // Monte Carlo standard error of alpha_disc
};

/// Gaussian correlation sqrt(4 abar / (1 + 3 abar)); independent of K.
double duality_alpha_tilde(double alpha_bar);

/// alpha_disc from the argmax pushforward of N(alpha_tilde e_y, (1 - alpha_tilde^2) I_V),
/// estimated by Monte Carlo and inverted through the uniform-state marginal
/// alpha_disc e_y + (1 - alpha_disc) / V. The endpoints are exact. A fixed
/// seed reuses the same draws for every alpha_bar, which keeps a grid monotone.
DualityPoint duality_schedule(double alpha_bar, std::size_t vocab, std::size_t draws = 100000,
                              std::uint64_t seed = 2024);

}  // namespace tta
