#include "tta/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "tta/error.hpp"

namespace tta {

NoiseSchedule cosine_schedule(int T, double K, double s) {
  if (T < 1) throw ConfigError("schedule length must be >= 1", "schedule.T");
  if (!(K > 0.0)) throw ConfigError("simplex constant must be > 0", "schedule.K");
  if (!(s >= 0.0)) throw ConfigError("cosine offset must be >= 0", "schedule.s");

  auto f = [&](int t) {
    const double c = std::cos(((static_cast<double>(t) / T + s) / (1.0 + s)) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0);

  NoiseSchedule sched;
  sched.T = T;
  sched.s = s;
  sched.K = K;
  sched.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
  sched.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    const double closed = f(t) / f0;
    const double beta = 1.0 - closed / sched.alpha_bar[i - 1];
    if (beta > kMaxBeta) {
      sched.alpha[i] = 1.0 - kMaxBeta;
      sched.alpha_bar[i] = sched.alpha_bar[i - 1] * sched.alpha[i];
    } else {
      sched.alpha[i] = 1.0 - beta;
      sched.alpha_bar[i] = closed;
    }
  }
  return sched;
}

std::string NoiseSchedule::to_json() const {
  nlohmann::ordered_json j;
  j["T"] = T;
  j["s"] = s;
  j["K"] = K;
  j["alpha_bar"] = alpha_bar;
  return j.dump();
}

NoiseSchedule NoiseSchedule::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  NoiseSchedule sched = cosine_schedule(j.at("T").get<int>(), j.at("K").get<double>(), j.at("s").get<double>());
  const auto stored = j.at("alpha_bar").get<std::vector<double>>();
  if (stored.size() != sched.alpha_bar.size()) throw ConfigError("alpha_bar length does not match T", "alpha_bar");
  sched.alpha_bar = stored;
  return sched;
}

SimplexState encode_tokens(const TokenIds& ids, std::size_t vocab, double K) {
  SimplexState out{ad::Tensor({ids.size(), vocab}, -K)};
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("token id " + std::to_string(ids[i]) + " outside [0, " + std::to_string(vocab) + ")");
    }
    out.logits.at(i, static_cast<std::size_t>(ids[i])) = K;
  }
  return out;
}

TokenIds decode(const SimplexState& state) {
  const std::size_t n = state.seq_len();
  TokenIds ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = state.logits.row(i);
    ids[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return ids;
}

SimplexState forward_noise(const SimplexState& x0, const TimestepPlan& plan, const NoiseSchedule& sched, Rng& rng) {
  const std::size_t n = x0.seq_len(), v = x0.vocab_size();
  if (plan.size() != n) throw DimensionError("plan length differs from sequence length");
  SimplexState out = x0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = plan[i];
    if (t < 0 || t > sched.T) throw IndexError("timestep " + std::to_string(t) + " outside [0, T]");
    const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
    const double signal = std::sqrt(ab);
    const double noise = std::sqrt(1.0 - ab) * sched.K;
    auto row = out.logits.row(i);
    for (std::size_t j = 0; j < v; ++j) {
      const double z = rng.normal();
      if (t != 0) row[j] = signal * row[j] + noise * z;
    }
  }
  return out;
}

SimplexState reverse_step(const SimplexState& x_hat, const TimestepPlan& next_plan, const NoiseSchedule& sched,
                          Rng& rng) {
  return forward_noise(x_hat, next_plan, sched, rng);
}

SimplexState project_top_p(const ad::Tensor& logits, double p, double K, Rng& rng) {
  if (!(p > 0.0) || p > 1.0) throw ConfigError("top-p must lie in (0, 1]", "top_p");
  const ad::Tensor probs = ad::softmax_rows(logits);
  const std::size_t n = logits.rows(), v = logits.cols();
  TokenIds ids(n);
  std::vector<std::size_t> order(v);
  for (std::size_t i = 0; i < n; ++i) {
    auto pr = probs.row(i);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pr[a] > pr[b]; });
    std::size_t keep = 0;
    double mass = 0.0;
    while (keep < v) {
      mass += pr[order[keep]];
      ++keep;
      if (mass >= p) break;
    }
    const double u = rng.uniform() * mass;
    double acc = 0.0;
    std::size_t pick = order[keep - 1];
    for (std::size_t k = 0; k < keep; ++k) {
      acc += pr[order[k]];
      if (u < acc) {
        pick = order[k];
        break;
      }
    }
    ids[i] = static_cast<int>(pick);
  }
  return encode_tokens(ids, v, K);
}

SimplexState project_argmax(const SimplexState& state, double K) {
  return encode_tokens(decode(state), state.vocab_size(), K);
}

}  // namespace tta
