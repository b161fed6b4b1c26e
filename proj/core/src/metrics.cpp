#include "tta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "tta/error.hpp"

namespace tta {

double fluctuation(const TokenIds& prev, const TokenIds& next) {
  if (prev.size() != next.size()) throw ContractError("fluctuation: sequences differ in length");
  if (prev.empty()) throw ContractError("fluctuation: empty sequences");
  std::size_t diff = 0;
  for (std::size_t i = 0; i < prev.size(); ++i) diff += prev[i] != next[i] ? 1 : 0;
  return static_cast<double>(diff) / static_cast<double>(prev.size());
}

std::vector<std::optional<double>> step_fluctuations(const GenerationTrace& trace) {
  std::vector<std::optional<double>> r(trace.steps.size());
  for (std::size_t s = 1; s < trace.steps.size(); ++s) r[s] = fluctuation(trace.steps[s - 1].tokens, trace.steps[s].tokens);
  return r;
}

double mean_fluctuation(const GenerationTrace& trace, int t) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 1; s < trace.steps.size() && trace.steps[s].t_global >= t; ++s) {
    total += fluctuation(trace.steps[s - 1].tokens, trace.steps[s].tokens);
    ++count;
  }
  if (count == 0) throw ContractError("mean_fluctuation: no step with a fluctuation at or above t");
  return total / static_cast<double>(count);
}

double mean_fluctuation(const GenerationTrace& trace) {
  if (trace.steps.size() < 2) throw ContractError("mean_fluctuation: trace needs at least two records");
  return mean_fluctuation(trace, trace.steps.back().t_global);
}

double key_token_change(const GenerationTrace& trace, std::size_t step, std::size_t k) {
  if (step + 1 >= trace.steps.size()) throw ContractError("key_token_change: step has no successor");
  const auto& rec = trace.steps[step];
  if (k == 0 || k > rec.key_tokens.size()) throw ContractError("key_token_change: k exceeds the recorded key tokens");
  const auto& next = trace.steps[step + 1].tokens;
  std::size_t changed = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const auto i = static_cast<std::size_t>(rec.key_tokens[j]);
    changed += rec.tokens.at(i) != next.at(i) ? 1 : 0;
  }
  return static_cast<double>(changed) / static_cast<double>(k);
}

std::optional<double> mean_key_token_change(const GenerationTrace& trace, std::size_t k) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s + 1 < trace.steps.size(); ++s) {
    if (trace.steps[s].key_tokens.size() < k) continue;
    total += key_token_change(trace, s, k);
    ++count;
  }
  if (count == 0) return std::nullopt;
  return total / static_cast<double>(count);
}

double confidence_drop(const GenerationTrace& trace, std::size_t step) {
  if (step >= trace.steps.size()) throw ContractError("confidence_drop: step out of range");
  const auto& r = trace.steps[step];
  if (!r.conf_after_guidance || !r.conf_before_next) {
    throw TraceError("trace record " + std::to_string(step) + ": confidence fields not recorded");
  }
  return *r.conf_after_guidance - *r.conf_before_next;
}

double dist_n(const std::vector<TokenIds>& samples, std::size_t n) {
  if (n == 0) throw ContractError("dist_n: n must be >= 1");
  std::set<std::vector<int>> unique;
  std::size_t total = 0;
  for (const auto& s : samples) {
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      unique.emplace(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i + n));
      ++total;
    }
  }
  if (total == 0) throw DomainError("dist_n: every sequence is shorter than n");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("pearson: need two equal-length series of length >= 2");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw DomainError("undefined correlation: constant series");
  return sxy / std::sqrt(sxx * syy);
}

double binned_correlation(const std::vector<double>& x, const std::vector<double>& y, std::size_t bins) {
  if (bins == 0) throw ContractError("binned_correlation: bins must be >= 1");
  if (x.size() != y.size() || x.size() < 2 * bins) {
    throw ContractError("binned_correlation: need equal lengths of at least 2*bins");
  }
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> bx(bins), by(bins);
  const std::size_t base = x.size() / bins, extra = x.size() % bins;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t len = base + (b < extra ? 1 : 0);
    double sx = 0.0, sy = 0.0;
    for (std::size_t j = 0; j < len; ++j, ++pos) {
      sx += x[order[pos]];
      sy += y[order[pos]];
    }
    bx[b] = sx / static_cast<double>(len);
    by[b] = sy / static_cast<double>(len);
  }
  return pearson(bx, by);
}

BoundReport pinsker_bound(double delta_R) {
  if (!(delta_R >= -1.0 && delta_R <= 1.0)) throw DomainError("pinsker_bound: delta_R outside [-1, 1]");
  BoundReport r;
  r.delta_R = delta_R;
  r.tv_lower = std::abs(delta_R);
  r.kl_lower = 2.0 * delta_R * delta_R;
  r.ce_bound_increment = r.kl_lower;
  return r;
}

std::vector<BoundReport> empirical_excess_bounds(const GenerationTrace& run, const GenerationTrace& baseline) {
  if (run.steps.size() != baseline.steps.size()) throw ContractError("excess bounds: traces differ in length");
  const auto a = step_fluctuations(run);
  const auto b = step_fluctuations(baseline);
  std::vector<BoundReport> out;
  for (std::size_t s = 1; s < a.size(); ++s) out.push_back(pinsker_bound(*a[s] - *b[s]));
  return out;
}

double trigram_overlap(const TokenIds& a, const TokenIds& b) {
  auto grams = [](const TokenIds& s) {
    std::set<std::vector<int>> g;
    for (std::size_t i = 0; i + 3 <= s.size(); ++i) g.insert({s[i], s[i + 1], s[i + 2]});
    return g;
  };
  const auto ga = grams(a), gb = grams(b);
  if (ga.empty() && gb.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& g : ga) inter += gb.count(g);
  return static_cast<double>(inter) / static_cast<double>(ga.size() + gb.size() - inter);
}

std::vector<StepMetrics> analyze_trace(const GenerationTrace& trace, std::size_t k) {
  const auto r = step_fluctuations(trace);
  std::vector<StepMetrics> rows;
  double running = 0.0;
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    const auto& rec = trace.steps[s];
    StepMetrics m;
    m.step = rec.step;
    m.R_t = r[s];
    if (r[s]) {
      running += *r[s];
      m.mean_R = running / static_cast<double>(s);
    }
    if (s + 1 < trace.steps.size() && rec.key_tokens.size() >= k && k > 0) m.key_change_ratio = key_token_change(trace, s, k);
    m.conf_after = rec.conf_after_guidance;
    m.conf_before_next = rec.conf_before_next;
    if (m.conf_after && m.conf_before_next) m.conf_drop = *m.conf_after - *m.conf_before_next;
    rows.push_back(m);
  }
  return rows;
}

}  // namespace tta
