#pragma once

// Desk-scale models: the timestep-conditioned denoiser, the attribute
// classifier used for guidance and evaluation, the trigram reference LM used as
// the fluency judge, and their training loops.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "tta/corpus.hpp"
#include "tta/diffusion.hpp"
#include "tta/rng.hpp"
#include "tta/tensor.hpp"

namespace tta {

// ---- parameters ----------------------------------------------------------------

/// Named, ordered parameter tensors.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ad::Tensor value;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  void add(std::string name, ad::Tensor value);
  const ad::Tensor& get(const std::string& name) const;
  ad::Tensor& get(const std::string& name);
  std::size_t index_of(const std::string& name) const;

  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const noexcept;
  bool all_finite() const noexcept;

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::vector<Entry> entries_;
};

/// Parameters of a store bound as leaves on one tape, in store order.
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const ParamStore& store);
  ad::Var operator[](const std::string& name) const;
  ad::Var at(std::size_t index) const { return vars_.at(index); }
  /// Gradient mirror of the store, same order and shapes.
  std::vector<ad::Tensor> gradients(const ad::Gradients& grads) const;

 private:
  const ParamStore* store_;
  std::vector<ad::Var> vars_;
};

/// Adaptive moment estimation with global-norm gradient clipping.
class Adam {
 public:
  struct Options {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // <= 0 disables clipping
  };

  Adam(const ParamStore& store, Options opts);
  void step(ParamStore& store, std::vector<ad::Tensor>& grads);

 private:
  Options opts_;
  std::vector<ad::Tensor> m_;
  std::vector<ad::Tensor> v_;
  std::int64_t t_ = 0;
};

// ---- denoiser -------------------------------------------------------------------

struct DenoiserConfig {
  std::size_t vocab = 64;
  std::size_t d_model = 32;
  std::size_t heads = 2;
  std::size_t ff = 64;
  std::size_t blocks = 2;
  std::size_t max_len = 16;
  int T = 64;                  // training schedule length; timesteps enter as t / T
  bool positional = true;      // false gives a permutation-equivariant model
  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

struct DenoiserParams {
  DenoiserConfig config;
  ParamStore store;
  friend bool operator==(const DenoiserParams&, const DenoiserParams&) = default;
};

DenoiserParams init_denoiser(const DenoiserConfig& config, Rng& rng);

/// Sinusoidal embedding of t / T, one row per token.
ad::Tensor timestep_features(const TimestepPlan& plan, int T, std::size_t dim);

/// Differentiable forward over a batch of equal-length states. Returns
/// clean-token logits of shape [B*N x V], rows grouped by sequence.
ad::Var denoise_forward(ad::Tape& tape, const BoundParams& bound, const DenoiserConfig& config,
                        const std::vector<const SimplexState*>& states, const std::vector<const TimestepPlan*>& plans);

/// Clean-token logits [N x V] for one state.
ad::Tensor denoise(const DenoiserParams& params, const SimplexState& x, const TimestepPlan& plan);

/// Batched inference; one [N x V] tensor per input state.
std::vector<ad::Tensor> denoise_batch(const DenoiserParams& params, const std::vector<SimplexState>& xs,
                                      const std::vector<TimestepPlan>& plans);

// ---- classifier -----------------------------------------------------------------

struct ClassifierConfig {
  std::size_t vocab = 64;
  std::size_t d_model = 32;
  std::size_t labels = 2;
  double temperature = 1.0;
  friend bool operator==(const ClassifierConfig&, const ClassifierConfig&) = default;
};

struct ClassifierParams {
  ClassifierConfig config;
  ParamStore store;
  friend bool operator==(const ClassifierParams&, const ClassifierParams&) = default;
};

ClassifierParams init_classifier(const ClassifierConfig& config, Rng& rng);

/// Label logits [B x labels] for `batch` stacked states ([B*N x V]); each row
/// passes through softmax(row / tau) before projection and mean pooling.
ad::Var classify_forward(const BoundParams& bound, const ClassifierConfig& config, ad::Var stacked,
                         std::size_t batch);

/// Label distribution for one state.
std::vector<double> classify(const ClassifierParams& params, const SimplexState& x);

/// log P(label | x) and its gradient w.r.t. the raw simplex logits.
struct LabelGradient {
  double log_prob = 0.0;
  ad::Tensor grad;  // [N x V]
};
LabelGradient label_log_prob_gradient(const ClassifierParams& params, const SimplexState& x, int label);

// ---- reference LM ---------------------------------------------------------------

/// Trigram model with add-k smoothing that backs off to bigram and unigram
/// estimates as its Dirichlet prior. Every conditional is a proper distribution
/// with strictly positive entries.
class ReferenceLM {
 public:
  static ReferenceLM fit(const std::vector<TokenIds>& corpus, std::size_t vocab, double k = 0.01);

  std::size_t vocab() const noexcept { return vocab_; }
  double unigram(int c) const;
  double bigram(int b, int c) const;
  double trigram(int a, int b, int c) const;
  /// P(ids[i] | history) using as much context as is available.
  double conditional(const TokenIds& ids, std::size_t i) const;
  /// Most frequent trigram (ties to the lexicographically smallest).
  std::array<int, 3> most_frequent_trigram() const;
  /// Draw a sequence from the model.
  TokenIds sample(std::size_t length, Rng& rng) const;

 private:
  std::size_t vocab_ = 0;
  double k_ = 0.01;
  std::vector<double> uni_;   // counts
  std::vector<double> bi_;    // counts [b * V + c]
  std::vector<double> bi_ctx_;
  std::vector<double> tri_;   // counts [(a * V + b) * V + c]
  std::vector<double> tri_ctx_;
  double total_ = 0.0;
};

/// exp(mean negative log conditional probability).
double reference_perplexity(const ReferenceLM& lm, const TokenIds& ids);

// ---- training -------------------------------------------------------------------

struct TrainOptions {
  std::size_t steps = 2000;
  std::size_t batch_size = 16;
  Adam::Options adam{};
  std::uint64_t seed = 7;
  /// Per-example clean prefix length drawn uniformly from [0, max_prefix]; the
  /// prefix rows sit at timestep 0 and are excluded from the loss.
  std::size_t max_prefix = 0;
  /// Probability that a batch uses independent per-token timesteps
  /// t_i ~ U{0..T} instead of one shared t; rows drawn at 0 are excluded from the loss.
  double mixed_plan_prob = 0.0;
  std::function<void(std::size_t step, double loss)> on_step;
};

struct TrainResult {
  std::vector<double> losses;
};

/// Denoising cross-entropy training: one shared t ~ U{1..T} per batch, or a
/// heterogeneous plan with probability mixed_plan_prob.
TrainResult train_denoiser(DenoiserParams& params, const std::vector<TokenIds>& corpus, const NoiseSchedule& sched,
                           const TrainOptions& opts);

/// Supervised training on clean encoded sequences.
TrainResult train_classifier(ClassifierParams& params, const std::vector<LabeledExample>& data, double K,
                             const TrainOptions& opts);

double classifier_accuracy(const ClassifierParams& params, const std::vector<LabeledExample>& data, double K);

struct ReduceOptions {
  std::size_t steps = 300;
  std::size_t batch_size = 8;
  std::size_t sampled_steps = 4;  // rollout steps that contribute to the loss, per example
  std::size_t prefix = 4;         // clamped clean prefix during rollouts
  double top_p = 0.9;
  double cosine_offset = 0.008;
  Adam::Options adam{};
  std::uint64_t seed = 11;
  std::function<void(std::size_t step, double loss)> on_step;
};

/// Student schedule length ceil(r * T).
int reduced_length(int teacher_T, double ratio);

/// Progressive step reduction: the student starts as a copy of the teacher with
/// a ceil(r*T)-step schedule and is fine-tuned with cross-entropy against the
/// ground truth at a random subset of steps of its own reverse rollout.
DenoiserParams reduce_steps(const DenoiserParams& teacher, double ratio, const std::vector<TokenIds>& corpus,
                            double K, const ReduceOptions& opts, TrainResult* result = nullptr);

struct RolloutEval {
  std::size_t steps = 0;
  std::size_t prefix = 4;
  double top_p = 0.9;
  double cosine_offset = 0.008;
  std::uint64_t seed = 99;
};

/// Held-out sequence cross-entropy: mean over examples and over the reverse
/// steps of CE(denoise logits, ground truth) on the non-prefix positions, with
/// the prefix clamped and `steps` inference steps striding the model schedule.
double rollout_cross_entropy(const DenoiserParams& params, const std::vector<TokenIds>& heldout, double K,
                             const RolloutEval& eval);

/// Global timestep used at inference step s of `steps` (s = steps..1): round(T*s/steps).
int strided_timestep(int T, std::size_t s, std::size_t steps);

// ---- checkpoints ----------------------------------------------------------------

inline constexpr int kCheckpointSchema = 1;

/// Binary container: 8-byte magic "TTACKPT\0", u64 little-endian header length,
/// JSON header {schema_version, kind, config, T, V, d, params:[{name, shape}]},
/// then each parameter's values as raw little-endian doubles in header order.
void save_checkpoint(std::ostream& os, const DenoiserParams& params);
void save_checkpoint(std::ostream& os, const ClassifierParams& params);
void save_checkpoint(const std::string& path, const DenoiserParams& params);
void save_checkpoint(const std::string& path, const ClassifierParams& params);
DenoiserParams load_denoiser(std::istream& is);
ClassifierParams load_classifier(std::istream& is);
DenoiserParams load_denoiser(const std::string& path);
ClassifierParams load_classifier(const std::string& path);
/// "denoiser" or "classifier".
std::string checkpoint_kind(const std::string& path);

}  // namespace tta
