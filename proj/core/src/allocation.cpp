#include "tta/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "tta/error.hpp"

namespace tta {

namespace {

constexpr std::pair<PolicyKind, const char*> kKindNames[] = {
    {PolicyKind::constant, "constant"},     {PolicyKind::linear, "linear"},
    {PolicyKind::backward_linear, "backward_linear"}, {PolicyKind::random, "random"},
    {PolicyKind::fixed_zero, "fixed_zero"}, {PolicyKind::fixed_T, "fixed_T"},
    {PolicyKind::adaptive, "adaptive"},
};

}  // namespace

std::string to_string(PolicyKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

PolicyKind parse_policy_kind(const std::string& name) {
  for (const auto& [k, n] : kKindNames) {
    if (name == n) return k;
  }
  throw ConfigError("unknown schedule policy '" + name + "'", "policy.kind");
}

void SchedulePolicy::validate() const {
  if (!(alpha_smooth >= 0.0 && alpha_smooth <= 1.0)) {
    throw ConfigError("alpha_smooth must lie in [0, 1]", "policy.alpha_smooth");
  }
}

std::string SchedulePolicy::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = to_string(kind);
  if (kind == PolicyKind::adaptive) j["alpha_smooth"] = alpha_smooth;
  if (kind == PolicyKind::random) j["seed"] = seed;
  return j.dump();
}

SchedulePolicy SchedulePolicy::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  SchedulePolicy p;
  p.kind = parse_policy_kind(j.at("kind").get<std::string>());
  p.alpha_smooth = j.value("alpha_smooth", p.alpha_smooth);
  p.seed = j.value("seed", p.seed);
  p.validate();
  return p;
}

std::vector<int> ImportanceScores::top_k(std::size_t k) const {
  if (k > raw.size()) throw ContractError("top_k: k exceeds the number of tokens");
  std::vector<int> idx(raw.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return raw[static_cast<std::size_t>(a)] > raw[static_cast<std::size_t>(b)];
  });
  idx.resize(k);
  return idx;
}

ImportanceScores normalize_scores(std::vector<double> raw) {
  ImportanceScores s;
  s.normalized.assign(raw.size(), 0.5);
  if (!raw.empty()) {
    const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
    const double range = *hi - *lo;
    if (range > 0.0) {
      for (std::size_t i = 0; i < raw.size(); ++i) s.normalized[i] = (raw[i] - *lo) / range;
    }
  }
  s.raw = std::move(raw);
  return s;
}

ImportanceScores importance_from_gradients(const ad::Tensor& grad) {
  if (grad.rank() != 2) throw DimensionError("importance: gradient must be [N x V]");
  std::vector<double> g(grad.rows());
  for (std::size_t i = 0; i < g.size(); ++i) {
    double sq = 0.0;
    for (double v : grad.row(i)) sq += v * v;
    g[i] = std::sqrt(sq);
  }
  return normalize_scores(std::move(g));
}

TimestepPlan allocate(const SchedulePolicy& policy, int t, int T, std::size_t n, const ImportanceScores* scores,
                      Rng& rng) {
  policy.validate();
  if (t < 0 || t > T) throw ContractError("allocate: global timestep outside [0, T]");
  TimestepPlan plan = TimestepPlan::constant(n, t);
  const auto last = static_cast<std::int64_t>(n) - 1;
  switch (policy.kind) {
    case PolicyKind::constant:
      break;
    case PolicyKind::linear:
      if (n > 1)
        for (std::size_t i = 0; i < n; ++i) plan.t[i] = static_cast<int>(static_cast<std::int64_t>(i) * t / last);
      break;
    case PolicyKind::backward_linear:
      if (n > 1)
        for (std::size_t i = 0; i < n; ++i)
          plan.t[i] = static_cast<int>((last - static_cast<std::int64_t>(i)) * t / last);
      break;
    case PolicyKind::random:
      if (t >= 2)
        for (auto& v : plan.t) v = static_cast<int>(rng.uniform_int(1, t - 1));
      break;
    case PolicyKind::fixed_zero:
      std::fill(plan.t.begin(), plan.t.end(), 0);
      break;
    case PolicyKind::fixed_T:
      std::fill(plan.t.begin(), plan.t.end(), T);
      break;
    case PolicyKind::adaptive: {
      if (scores == nullptr) throw ContractError("adaptive allocation requires importance scores");
      if (scores->normalized.size() != n) throw DimensionError("adaptive allocation: score count differs from N");
      const double a = policy.alpha_smooth;
      for (std::size_t i = 0; i < n; ++i) {
        const double v = a * t + (1.0 - a) * (1.0 - scores->normalized[i]) * t;
        plan.t[i] = static_cast<int>(std::lround(v));
      }
      break;
    }
  }
  for (auto& v : plan.t) v = std::clamp(v, 0, T);
  return plan;
}

std::vector<double> solve_budgeted_allocation(const AllocationProblem& p) {
  const std::size_t n = p.weights.size();
  if (n == 0) throw ConfigError("allocation problem has no tokens", "weights");
  if (!(p.var_min <= p.var_max)) throw ConfigError("box lower bound exceeds upper bound", "var_min");
  for (double b : p.weights) {
    if (!(b >= 0.0) || !std::isfinite(b)) throw ConfigError("weights must be finite and non-negative", "weights");
  }
  const double nn = static_cast<double>(n);
  const double tol = 1e-12 * std::max(1.0, std::abs(p.budget));
  if (p.budget < nn * p.var_min - tol || p.budget > nn * p.var_max + tol) {
    throw ConfigError("budget outside [N*var_min, N*var_max]", "budget");
  }

  const bool all_equal = std::all_of(p.weights.begin(), p.weights.end(), [&](double b) { return b == p.weights[0]; });
  if (all_equal) return std::vector<double>(n, p.budget / nn);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p.weights[a] < p.weights[b]; });
  std::vector<double> var(n, p.var_min);
  double residual = p.budget - nn * p.var_min;
  const double width = p.var_max - p.var_min;
  for (std::size_t i : order) {
    if (residual <= 0.0) break;
    const double add = std::min(residual, width);
    var[i] += add;
    residual -= add;
  }
  return var;
}

double allocation_objective(const AllocationProblem& p, const std::vector<double>& variances) {
  double obj = 0.0;
  for (std::size_t i = 0; i < variances.size(); ++i) obj += p.weights.at(i) * variances[i];
  return obj;
}

double duality_alpha_tilde(double alpha_bar) {
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw DomainError("alpha_bar must lie in [0, 1]");
  return std::sqrt(4.0 * alpha_bar / (1.0 + 3.0 * alpha_bar));
}

DualityPoint duality_schedule(double alpha_bar, std::size_t vocab, std::size_t draws, std::uint64_t seed) {
  if (vocab < 2) throw DomainError("duality needs a vocabulary of at least 2");
  if (draws == 0) throw ConfigError("draw count must be >= 1", "draws");
  DualityPoint out;
  out.alpha_bar = alpha_bar;
  out.alpha_tilde = duality_alpha_tilde(alpha_bar);
  if (out.alpha_tilde >= 1.0) {
    out.alpha_tilde = 1.0;
    out.alpha_disc = 1.0;
    return out;
  }
  if (out.alpha_tilde <= 0.0) return out;  // argmax uniform over V by symmetry

  const double sd = std::sqrt(1.0 - out.alpha_tilde * out.alpha_tilde);
  Rng rng(seed);
  std::size_t hits = 0;
  for (std::size_t d = 0; d < draws; ++d) {
    // token y = 0; its coordinate wins ties under lowest-index argmax
    const double wy = out.alpha_tilde + sd * rng.normal();
    bool wins = true;
    for (std::size_t j = 1; j < vocab; ++j) {
      if (sd * rng.normal() > wy) wins = false;
    }
    hits += wins ? 1 : 0;
  }
  const double inv_v = 1.0 / static_cast<double>(vocab);
  const double prob = static_cast<double>(hits) / static_cast<double>(draws);
  out.alpha_disc = (prob - inv_v) / (1.0 - inv_v);
  out.std_error = std::sqrt(prob * (1.0 - prob) / static_cast<double>(draws)) / (1.0 - inv_v);
  return out;
}

}  // namespace tta
