#pragma once

// Classifier-guided reverse sampling with per-token timestep plans, optional
// length clamping and prompt conditioning, and a per-step trace.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tta/allocation.hpp"
#include "tta/diffusion.hpp"
#include "tta/models.hpp"
#include "tta/rng.hpp"

namespace tta {

struct GuidanceConfig {
  double lambda = 2000.0;
  int target_label = 1;
  int iterations = 2;
  double window = 1.0;  // fraction of the reverse steps, from the start, that are guided

  void validate() const;
};

struct LexicalConstraint {
  enum class Kind { length };
  Kind kind = Kind::length;
  int eos_position = 0;
  int eos_token = 0;

  void validate(std::size_t seq_len, std::size_t vocab) const;
};

/// One reverse step. Optional fields are null in JSON when not measured:
/// grad norms and key tokens exist only on guided steps; conf_after_guidance
/// only on guided steps; conf_before_next on a guided step that has a successor.
struct StepRecord {
  int step = 0;      // 0-based execution index
  int t_global = 0;
  TimestepPlan plan;
  TokenIds tokens;
  std::vector<double> grad_norms;
  std::vector<int> key_tokens;
  std::optional<double> conf_after_guidance;
  std::optional<double> conf_before_next;
  std::uint64_t seed_digest = 0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct GenerationTrace {
  std::vector<StepRecord> steps;

  /// One JSON object per line, fields in declaration order.
  void write_jsonl(std::ostream& os) const;
  std::string to_jsonl() const;
  /// Validates the schema; errors name the offending record index.
  static GenerationTrace read_jsonl(std::istream& is);

  friend bool operator==(const GenerationTrace&, const GenerationTrace&) = default;
};

/// Overwrite rows `positions[j]` with the encoding of ids[j].
SimplexState clamp(const SimplexState& x, const TokenIds& ids, const std::vector<std::size_t>& positions, double K);

/// `cfg.iterations` ascent steps x += lambda * grad log P(target | x). Scores
/// come from the last gradient evaluated (at x itself when iterations == 0).
std::pair<SimplexState, ImportanceScores> guided_update(const SimplexState& x, const ClassifierParams& clf,
                                                        const GuidanceConfig& cfg);

struct GenerateOptions {
  std::size_t steps = 64;
  std::size_t seq_len = 16;
  double top_p = 0.9;
  std::size_t key_k = 5;
  TokenIds prompt;  // clamped to positions 0..prompt.size()-1
  std::optional<LexicalConstraint> constraint;
};

struct Generation {
  TokenIds tokens;
  GenerationTrace trace;
};

/// Adaptive allocation uses the scores of the most recent guided step (one
/// step of lag); before any guided step it allocates a constant plan.
inline constexpr int kAdaptiveLag = 1;

/// Reverse sampling loop. `clf` and `cfg` may be null for unguided sampling;
/// the adaptive policy needs both. `rng` drives noise and top-p sampling; the
/// random policy draws from its own stream seeded from policy.seed.
Generation generate(const DenoiserParams& den, const ClassifierParams* clf, const NoiseSchedule& sched,
                    const SchedulePolicy& policy, const GuidanceConfig* cfg, const GenerateOptions& opts, Rng& rng);

}  // namespace tta
