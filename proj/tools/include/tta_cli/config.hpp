#pragma once

// Experiment configuration: one versioned JSON document per run.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tta/allocation.hpp"
#include "tta/corpus.hpp"
#include "tta/guidance.hpp"

namespace tta::cli {

inline constexpr int kConfigSchema = 1;

struct CorpusSection {
  std::string path;  // empty: synthesize from `spec`
  CorpusSpec spec;
  double split_ratio = 0.8;
  std::uint64_t split_seed = 3;
  friend bool operator==(const CorpusSection&, const CorpusSection&) = default;
};

struct ScheduleSection {
  int T = 64;
  double s = 0.008;
  double K = 5.0;
  friend bool operator==(const ScheduleSection&, const ScheduleSection&) = default;
};

struct ModelSection {
  std::size_t d_model = 32;
  std::size_t heads = 2;
  std::size_t ff = 64;
  std::size_t blocks = 2;
  bool positional = true;
  std::size_t classifier_d_model = 32;
  double classifier_temperature = 1.0;
  std::size_t eval_classifier_d_model = 48;
  friend bool operator==(const ModelSection&, const ModelSection&) = default;
};

struct TrainSection {
  std::size_t steps = 20000;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  double clip_norm = 1.0;
  std::size_t max_prefix = 4;
  double mixed_plan_prob = 0.5;
  std::size_t classifier_steps = 3000;
  std::size_t classifier_batch_size = 32;
  friend bool operator==(const TrainSection&, const TrainSection&) = default;
};

struct ReduceSection {
  std::string teacher;  // empty: <output_dir>/denoiser.ckpt
  std::vector<double> ladder{0.5, 0.25};
  std::size_t steps = 300;
  std::size_t batch_size = 8;
  std::size_t sampled_steps = 4;
  std::size_t prefix = 4;
  double top_p = 0.9;
  double lr = 3e-4;
  std::size_t eval_examples = 200;
  friend bool operator==(const ReduceSection&, const ReduceSection&) = default;
};

struct ConstraintSection {
  int eos_position = 0;
  int eos_token = 0;
  friend bool operator==(const ConstraintSection&, const ConstraintSection&) = default;
};

struct GenerationSection {
  std::string denoiser;    // empty: <output_dir>/denoiser.ckpt
  std::string classifier;  // empty: unguided
  std::size_t samples = 200;
  std::size_t steps = 64;
  SchedulePolicy policy;
  double lambda = 2000.0;
  std::string target_label = "positive";
  int iterations = 2;
  double window = 1.0;
  double top_p = 0.9;
  std::size_t key_k = 5;
  std::optional<ConstraintSection> constraint;
  TokenIds prompt;
  friend bool operator==(const GenerationSection& a, const GenerationSection& b) {
    return a.denoiser == b.denoiser && a.classifier == b.classifier && a.samples == b.samples && a.steps == b.steps &&
           a.policy.kind == b.policy.kind && a.policy.alpha_smooth == b.policy.alpha_smooth &&
           a.policy.seed == b.policy.seed && a.lambda == b.lambda && a.target_label == b.target_label &&
           a.iterations == b.iterations && a.window == b.window && a.top_p == b.top_p && a.key_k == b.key_k &&
           a.constraint == b.constraint && a.prompt == b.prompt;
  }
};

struct AnalyzeSection {
  std::vector<std::string> runs;  // generation output directories
  std::size_t k = 5;
  std::size_t bins = 10;
  friend bool operator==(const AnalyzeSection&, const AnalyzeSection&) = default;
};

struct DualitySection {
  std::size_t vocab = 64;
  std::size_t grid = 11;
  std::size_t draws = 100000;
  std::uint64_t seed = 2024;
  friend bool operator==(const DualitySection&, const DualitySection&) = default;
};

struct RunConfig {
  int schema_version = kConfigSchema;
  CorpusSection corpus;
  ScheduleSection schedule;
  ModelSection model;
  TrainSection train;
  ReduceSection reduce;
  GenerationSection generation;
  AnalyzeSection analyze;
  DualitySection duality;
  std::string output_dir = "out";
  std::uint64_t seed = 1;

  /// Invariants that do not depend on the file system.
  void validate() const;
  /// Canonical JSON (sorted keys).
  std::string to_json() const;
  /// Missing keys take defaults; unknown keys and type mismatches are
  /// ConfigErrors naming the field path.
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::string& path);
  /// 16 hex digits of FNV-1a over the canonical JSON.
  std::string hash() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

}  // namespace tta::cli
