#pragma once

// Simplex diffusion primitives: cosine noise schedule, the +/-K token mapping,
// per-token forward noising and the per-token reverse (re-noising) step.

#include <cstddef>
#include <string>
#include <vector>

#include "tta/rng.hpp"
#include "tta/tensor.hpp"

namespace tta {

using TokenIds = std::vector<int>;

/// Per-step signal coefficients of a variance-preserving schedule.
///
/// `alpha[t]` and `alpha_bar[t]` are indexed by timestep 0..T; `alpha[0]` is 1
/// and `alpha_bar[0]` is exactly 1.
struct NoiseSchedule {
  int T = 0;
  double s = 0.008;  // cosine offset
  double K = 5.0;    // simplex constant
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  /// Variance injected by step t (1 - alpha_t), t in [1, T].
  double injected_variance(int t) const { return 1.0 - alpha.at(static_cast<std::size_t>(t)); }

  std::string to_json() const;
  static NoiseSchedule from_json(const std::string& text);
};

/// Largest per-step beta; only the last step of a cosine schedule reaches it.
inline constexpr double kMaxBeta = 0.999;

/// Squared-cosine schedule normalized so alpha_bar[0] = 1.
NoiseSchedule cosine_schedule(int T, double K, double s = 0.008);

/// Per-token local timesteps, each in [0, T].
struct TimestepPlan {
  std::vector<int> t;

  static TimestepPlan constant(std::size_t n, int value) { return {std::vector<int>(n, value)}; }
  std::size_t size() const noexcept { return t.size(); }
  int operator[](std::size_t i) const { return t[i]; }
  friend bool operator==(const TimestepPlan&, const TimestepPlan&) = default;
};

/// N x V matrix of per-token logits over the vocabulary.
struct SimplexState {
  ad::Tensor logits;

  std::size_t seq_len() const noexcept { return logits.rank() == 2 ? logits.dim(0) : 0; }
  std::size_t vocab_size() const noexcept { return logits.rank() == 2 ? logits.dim(1) : 0; }
  friend bool operator==(const SimplexState&, const SimplexState&) = default;
};

/// Row i is +K at ids[i] and -K elsewhere.
SimplexState encode_tokens(const TokenIds& ids, std::size_t vocab, double K);

/// Per-row argmax; ties go to the lowest index.
TokenIds decode(const SimplexState& state);

/// Row i: sqrt(abar_{t_i}) x0_i + sqrt(1 - abar_{t_i}) z_i with z_i ~ N(0, K^2 I).
/// Every row draws V normals in row order; rows with t_i = 0 are copied unchanged.
SimplexState forward_noise(const SimplexState& x0, const TimestepPlan& plan, const NoiseSchedule& sched, Rng& rng);

/// Re-noise a projected state to the next per-token timesteps.
SimplexState reverse_step(const SimplexState& x_hat, const TimestepPlan& next_plan, const NoiseSchedule& sched,
                          Rng& rng);

/// Sample one token per row from the top-p nucleus of softmax(row) and emit it
/// in +/-K form. The nucleus is the shortest prefix (by descending probability,
/// ties by index) whose mass reaches p, and always holds at least one token.
SimplexState project_top_p(const ad::Tensor& logits, double p, double K, Rng& rng);

/// encode(decode(state)).
SimplexState project_argmax(const SimplexState& state, double K);

}  // namespace tta
