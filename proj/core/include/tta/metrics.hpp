#pragma once

// Diagnostics over generation traces and sample sets: fluctuation ratio,
// key-token change, confidence drop, Dist-n, binned correlation and the
// Pinsker-chain lower bounds.

#include <cstddef>
#include <optional>
#include <vector>

#include "tta/diffusion.hpp"
#include "tta/guidance.hpp"

namespace tta {

/// Normalized Hamming distance.
double fluctuation(const TokenIds& prev, const TokenIds& next);

/// Per-record fluctuation against the previous record's tokens; entry 0 is
/// empty because the first record has no decoded predecessor.
std::vector<std::optional<double>> step_fluctuations(const GenerationTrace& trace);

/// Mean fluctuation over the records from the start of the reverse process
/// down to global timestep t (records with t_global >= t, excluding record 0).
double mean_fluctuation(const GenerationTrace& trace, int t);

/// Mean over every record that has a fluctuation.
double mean_fluctuation(const GenerationTrace& trace);

/// Fraction of the first k recorded key tokens of `step` whose token differs
/// in the following record.
double key_token_change(const GenerationTrace& trace, std::size_t step, std::size_t k);

/// Mean key-token change over every guided record that has a successor; nullopt when none.
std::optional<double> mean_key_token_change(const GenerationTrace& trace, std::size_t k);

/// conf_after_guidance - conf_before_next.
double confidence_drop(const GenerationTrace& trace, std::size_t step);

/// Distinct n-grams over total n-grams, pooled over samples.
double dist_n(const std::vector<TokenIds>& samples, std::size_t n = 3);

/// Pearson correlation of per-bin means after sorting by x and cutting into
/// `bins` equal-count bins (sizes differ by at most one; earlier bins larger).
double binned_correlation(const std::vector<double>& x, const std::vector<double>& y, std::size_t bins);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct BoundReport {
  double delta_R = 0.0;
  double tv_lower = 0.0;
  double kl_lower = 0.0;
  double ce_bound_increment = 0.0;
};

BoundReport pinsker_bound(double delta_R);

/// Empirical excess fluctuation per record: the run's fluctuation minus the
/// baseline run's at the same record index (both must have equal length).
std::vector<BoundReport> empirical_excess_bounds(const GenerationTrace& run, const GenerationTrace& baseline);

/// Auxiliary metric: Jaccard overlap of the trigram sets of two sequences,
/// a rough semantics-aware stand-in for embedding similarities.
double trigram_overlap(const TokenIds& a, const TokenIds& b);

struct StepMetrics {
  int step = 0;
  std::optional<double> R_t;
  std::optional<double> mean_R;
  std::optional<double> key_change_ratio;
  std::optional<double> conf_after;
  std::optional<double> conf_before_next;
  std::optional<double> conf_drop;
};

std::vector<StepMetrics> analyze_trace(const GenerationTrace& trace, std::size_t k);

}  // namespace tta
