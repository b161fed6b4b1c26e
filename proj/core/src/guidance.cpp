#include "tta/guidance.hpp"

#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "tta/error.hpp"

namespace tta {

using nlohmann::json;
using nlohmann::ordered_json;

void GuidanceConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0", "guidance.lambda");
  if (iterations < 0) throw ConfigError("iterations must be >= 0", "guidance.iterations");
  if (!(window >= 0.0 && window <= 1.0)) throw ConfigError("window must lie in [0, 1]", "guidance.window");
  if (target_label < 0) throw ConfigError("target label must be >= 0", "guidance.target_label");
}

void LexicalConstraint::validate(std::size_t seq_len, std::size_t vocab) const {
  if (eos_position < 0 || static_cast<std::size_t>(eos_position) >= seq_len) {
    throw ConfigError("eos_position must lie in [0, N)", "constraint.eos_position");
  }
  if (eos_token < 0 || static_cast<std::size_t>(eos_token) >= vocab) {
    throw ConfigError("eos_token must lie in [0, V)", "constraint.eos_token");
  }
}

// ---- trace I/O ----------------------------------------------------------------

namespace {

ordered_json opt(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

template <typename T>
T field(const json& j, const char* name, std::size_t index) {
  if (!j.contains(name)) throw TraceError("trace record " + std::to_string(index) + ": missing field '" + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    throw TraceError("trace record " + std::to_string(index) + ": bad type for field '" + name + "'");
  }
}

std::optional<double> opt_field(const json& j, const char* name, std::size_t index) {
  if (!j.contains(name)) throw TraceError("trace record " + std::to_string(index) + ": missing field '" + name + "'");
  const auto& v = j.at(name);
  if (v.is_null()) return std::nullopt;
  if (!v.is_number()) throw TraceError("trace record " + std::to_string(index) + ": bad type for field '" + name + "'");
  return v.get<double>();
}

}  // namespace

void GenerationTrace::write_jsonl(std::ostream& os) const {
  for (const auto& r : steps) {
    ordered_json j;
    j["step"] = r.step;
    j["t_global"] = r.t_global;
    j["plan"] = r.plan.t;
    j["tokens"] = r.tokens;
    j["grad_norms"] = r.grad_norms;
    j["key_tokens"] = r.key_tokens;
    j["conf_after_guidance"] = opt(r.conf_after_guidance);
    j["conf_before_next"] = opt(r.conf_before_next);
    j["seed_digest"] = r.seed_digest;
    os << j.dump() << '\n';
  }
}

std::string GenerationTrace::to_jsonl() const {
  std::ostringstream os;
  write_jsonl(os);
  return os.str();
}

GenerationTrace GenerationTrace::read_jsonl(std::istream& is) {
  GenerationTrace trace;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const std::size_t idx = trace.steps.size();
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      throw TraceError("trace record " + std::to_string(idx) + ": not valid JSON");
    }
    if (!j.is_object()) throw TraceError("trace record " + std::to_string(idx) + ": not an object");
    StepRecord r;
    r.step = field<int>(j, "step", idx);
    r.t_global = field<int>(j, "t_global", idx);
    r.plan.t = field<std::vector<int>>(j, "plan", idx);
    r.tokens = field<TokenIds>(j, "tokens", idx);
    r.grad_norms = field<std::vector<double>>(j, "grad_norms", idx);
    r.key_tokens = field<std::vector<int>>(j, "key_tokens", idx);
    r.conf_after_guidance = opt_field(j, "conf_after_guidance", idx);
    r.conf_before_next = opt_field(j, "conf_before_next", idx);
    r.seed_digest = field<std::uint64_t>(j, "seed_digest", idx);
    if (idx == 0) n = r.tokens.size();
    if (r.tokens.size() != n || r.plan.size() != n) {
      throw TraceError("trace record " + std::to_string(idx) + ": token or plan length differs from N");
    }
    if (!r.grad_norms.empty() && r.grad_norms.size() != n) {
      throw TraceError("trace record " + std::to_string(idx) + ": grad_norms length differs from N");
    }
    for (int k : r.key_tokens) {
      if (k < 0 || static_cast<std::size_t>(k) >= n) {
        throw TraceError("trace record " + std::to_string(idx) + ": key token index out of range");
      }
    }
    trace.steps.push_back(std::move(r));
  }
  return trace;
}

// ---- sampling -------------------------------------------------------------------

SimplexState clamp(const SimplexState& x, const TokenIds& ids, const std::vector<std::size_t>& positions, double K) {
  if (ids.size() != positions.size()) throw ContractError("clamp: ids and positions differ in length");
  SimplexState out = x;
  const std::size_t v = x.vocab_size();
  for (std::size_t j = 0; j < positions.size(); ++j) {
    if (positions[j] >= x.seq_len()) throw IndexError("clamp: position out of range");
    if (ids[j] < 0 || static_cast<std::size_t>(ids[j]) >= v) throw IndexError("clamp: token id out of range");
    auto row = out.logits.row(positions[j]);
    for (std::size_t c = 0; c < v; ++c) row[c] = static_cast<std::size_t>(ids[j]) == c ? K : -K;
  }
  return out;
}

std::pair<SimplexState, ImportanceScores> guided_update(const SimplexState& x, const ClassifierParams& clf,
                                                        const GuidanceConfig& cfg) {
  cfg.validate();
  if (static_cast<std::size_t>(cfg.target_label) >= clf.config.labels) {
    throw ConfigError("target label exceeds the classifier's label count", "guidance.target_label");
  }
  SimplexState state = x;
  ad::Tensor last;
  const int evals = std::max(cfg.iterations, 1);
  for (int it = 0; it < evals; ++it) {
    const auto lg = label_log_prob_gradient(clf, state, cfg.target_label);
    if (!lg.grad.all_finite() || !std::isfinite(lg.log_prob)) {
      throw GuidanceError("non-finite classifier gradient at guidance iteration " + std::to_string(it));
    }
    last = lg.grad;
    if (it < cfg.iterations) {
      auto data = state.logits.data();
      const auto g = lg.grad.data();
      for (std::size_t i = 0; i < data.size(); ++i) data[i] += cfg.lambda * g[i];
    }
  }
  return {std::move(state), importance_from_gradients(last)};
}

Generation generate(const DenoiserParams& den, const ClassifierParams* clf, const NoiseSchedule& sched,
                    const SchedulePolicy& policy, const GuidanceConfig* cfg, const GenerateOptions& opts, Rng& rng) {
  policy.validate();
  if (cfg != nullptr) cfg->validate();
  const int T = sched.T;
  const std::size_t n = opts.seq_len;
  const std::size_t v = den.config.vocab;
  const double K = sched.K;
  if (T != den.config.T) throw ConfigError("schedule T differs from the denoiser's T", "schedule.T");
  if (opts.steps < 1 || opts.steps > static_cast<std::size_t>(T)) {
    throw ConfigError("steps must lie in [1, T]", "generation.steps");
  }
  if (n == 0 || (den.config.positional && n > den.config.max_len)) {
    throw ConfigError("sequence length outside the denoiser's range", "generation.seq_len");
  }
  if (!(opts.top_p > 0.0 && opts.top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]", "generation.top_p");
  if (opts.prompt.size() > n) throw ConfigError("prompt longer than the sequence", "generation.prompt");
  if (policy.kind == PolicyKind::adaptive && (clf == nullptr || cfg == nullptr)) {
    throw ConfigError("adaptive policy requires a classifier and guidance settings", "policy.kind");
  }
  if (cfg != nullptr && clf == nullptr) throw ConfigError("guidance requires a classifier", "classifier");
  if (clf != nullptr && clf->config.vocab != v) throw ConfigError("classifier vocabulary differs from denoiser's", "classifier");
  if (opts.key_k > n) throw ConfigError("key_k exceeds sequence length", "generation.key_k");

  // fixed rows: prompt prefix and the end token
  std::map<std::size_t, int> fixed;
  for (std::size_t i = 0; i < opts.prompt.size(); ++i) fixed[i] = opts.prompt[i];
  if (opts.constraint) {
    opts.constraint->validate(n, v);
    fixed[static_cast<std::size_t>(opts.constraint->eos_position)] = opts.constraint->eos_token;
  }
  std::vector<std::size_t> fixed_pos;
  TokenIds fixed_ids;
  for (const auto& [p, id] : fixed) {
    fixed_pos.push_back(p);
    fixed_ids.push_back(id);
  }
  auto pin = [&](TimestepPlan plan) {
    for (std::size_t p : fixed_pos) plan.t[p] = 0;
    return plan;
  };

  Rng alloc_rng(policy.seed);
  const std::size_t guided_steps =
      cfg == nullptr ? 0 : static_cast<std::size_t>(std::floor(cfg->window * static_cast<double>(opts.steps) + 1e-9));

  // pure noise, fixed rows already clean
  SimplexState x{ad::Tensor({n, v})};
  for (double& e : x.logits.data()) e = K * rng.normal();
  x = clamp(x, fixed_ids, fixed_pos, K);

  SchedulePolicy first = policy;
  if (policy.kind == PolicyKind::adaptive) first.kind = PolicyKind::constant;
  TimestepPlan plan = pin(allocate(first, strided_timestep(T, opts.steps, opts.steps), T, n, nullptr, alloc_rng));

  std::vector<bool> token_valued(n, false);
  for (std::size_t p : fixed_pos) token_valued[p] = true;
  std::optional<ImportanceScores> scores;
  Generation out;
  SimplexState x_hat;

  for (std::size_t k = 0; k < opts.steps; ++k) {
    const std::size_t s = opts.steps - k;
    const int t = strided_timestep(T, s, opts.steps);
    const ad::Tensor logits = denoise(den, x, plan);
    x_hat = project_top_p(logits, opts.top_p, K, rng);
    // frozen rows pass through unchanged once they hold a token
    for (std::size_t i = 0; i < n; ++i) {
      if (plan.t[i] == 0 && token_valued[i]) {
        auto dst = x_hat.logits.row(i);
        const auto src = x.logits.row(i);
        std::copy(src.begin(), src.end(), dst.begin());
      }
      token_valued[i] = true;
    }
    x_hat = clamp(x_hat, fixed_ids, fixed_pos, K);

    StepRecord rec;
    rec.step = static_cast<int>(k);
    rec.t_global = t;
    rec.plan = plan;

    if (!out.trace.steps.empty() && out.trace.steps.back().conf_after_guidance) {
      out.trace.steps.back().conf_before_next = classify(*clf, x_hat)[static_cast<std::size_t>(cfg->target_label)];
    }
    if (k < guided_steps) {
      auto [moved, sc] = guided_update(x_hat, *clf, *cfg);
      x_hat = clamp(project_argmax(moved, K), fixed_ids, fixed_pos, K);
      rec.grad_norms = sc.raw;
      rec.key_tokens = sc.top_k(opts.key_k);
      rec.conf_after_guidance = classify(*clf, x_hat)[static_cast<std::size_t>(cfg->target_label)];
      scores = std::move(sc);
    }
    rec.tokens = decode(x_hat);

    const int t_next = strided_timestep(T, s - 1, opts.steps);
    TimestepPlan next;
    if (policy.kind == PolicyKind::adaptive && !scores) {
      next = allocate(first, t_next, T, n, nullptr, alloc_rng);
    } else {
      next = allocate(policy, t_next, T, n, scores ? &*scores : nullptr, alloc_rng);
    }
    next = pin(std::move(next));
    rec.seed_digest = rng.digest();
    out.trace.steps.push_back(std::move(rec));
    x = reverse_step(x_hat, next, sched, rng);
    plan = std::move(next);
  }
  out.tokens = decode(x_hat);
  return out;
}

}  // namespace tta
