#include <algorithm>
#include <cmath>
#include <numeric>

#include "tta/error.hpp"
#include "tta/models.hpp"

namespace tta {

namespace {

void check_loss(double loss, std::size_t step, const char* what) {
  if (!std::isfinite(loss)) {
    throw TrainingError(std::string(what) + " diverged at step " + std::to_string(step) + " (loss " +
                        std::to_string(loss) + ")");
  }
}

std::vector<std::size_t> sample_batch(std::size_t corpus_size, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(corpus_size) - 1));
  return idx;
}

}  // namespace

int strided_timestep(int T, std::size_t s, std::size_t steps) {
  if (steps == 0) throw ConfigError("inference steps must be >= 1", "steps");
  const auto num = 2 * static_cast<std::int64_t>(T) * static_cast<std::int64_t>(s) + static_cast<std::int64_t>(steps);
  return static_cast<int>(num / (2 * static_cast<std::int64_t>(steps)));
}

int reduced_length(int teacher_T, double ratio) {
  if (!(ratio > 0.0) || ratio > 1.0) throw ConfigError("reduction ratio must lie in (0, 1]", "reduce.ratio");
  return std::max(1, static_cast<int>(std::ceil(ratio * teacher_T - 1e-9)));
}

TrainResult train_denoiser(DenoiserParams& params, const std::vector<TokenIds>& corpus, const NoiseSchedule& sched,
                           const TrainOptions& opts) {
  TrainResult result;
  if (opts.steps == 0) return result;
  if (corpus.empty()) throw ConfigError("training corpus is empty", "corpus");
  if (sched.T != params.config.T) throw ConfigError("schedule length differs from the model's T", "schedule.T");
  const std::size_t n = corpus.front().size();
  if (opts.max_prefix >= n) throw ConfigError("max_prefix must be shorter than the sequence", "train.max_prefix");

  Rng rng(opts.seed);
  Adam adam(params.store, opts.adam);
  const std::size_t V = params.config.vocab;
  for (std::size_t step = 0; step < opts.steps; ++step) {
    const auto idx = sample_batch(corpus.size(), opts.batch_size, rng);
    const int t = static_cast<int>(rng.uniform_int(1, sched.T));
    const bool mixed = opts.mixed_plan_prob > 0.0 && rng.uniform() < opts.mixed_plan_prob;
    std::vector<SimplexState> noisy;
    std::vector<TimestepPlan> plans;
    std::vector<std::size_t> rows;
    std::vector<int> targets;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const TokenIds& ids = corpus[idx[b]];
      const auto prefix = opts.max_prefix ? static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(opts.max_prefix))) : 0;
      TimestepPlan plan = TimestepPlan::constant(n, t);
      if (mixed)
        for (auto& ti : plan.t) ti = static_cast<int>(rng.uniform_int(0, sched.T));
      for (std::size_t i = 0; i < prefix; ++i) plan.t[i] = 0;
      noisy.push_back(forward_noise(encode_tokens(ids, V, sched.K), plan, sched, rng));
      for (std::size_t i = prefix; i < n; ++i) {
        if (plan.t[i] == 0) continue;
        rows.push_back(b * n + i);
        targets.push_back(ids[i]);
      }
      plans.push_back(std::move(plan));
    }
    if (rows.empty()) {
      rows.push_back(0);
      targets.push_back(corpus[idx[0]][0]);
    }
    std::vector<const SimplexState*> sp;
    std::vector<const TimestepPlan*> pp;
    for (std::size_t b = 0; b < noisy.size(); ++b) {
      sp.push_back(&noisy[b]);
      pp.push_back(&plans[b]);
    }
    ad::Tape tape;
    const BoundParams bound(tape, params.store);
    ad::Var logits = denoise_forward(tape, bound, params.config, sp, pp);
    ad::Var loss = ad::cross_entropy(ad::gather_rows(logits, rows), targets);
    const double lv = loss.value().item();
    check_loss(lv, step, "denoiser training");
    auto grads = bound.gradients(tape.backward(loss));
    adam.step(params.store, grads);
    if (!params.store.all_finite()) throw TrainingError("denoiser parameters became non-finite at step " + std::to_string(step));
    result.losses.push_back(lv);
    if (opts.on_step) opts.on_step(step, lv);
  }
  return result;
}

TrainResult train_classifier(ClassifierParams& params, const std::vector<LabeledExample>& data, double K,
                             const TrainOptions& opts) {
  TrainResult result;
  if (opts.steps == 0) return result;
  if (data.empty()) throw ConfigError("classifier training data is empty", "corpus");
  Rng rng(opts.seed);
  Adam adam(params.store, opts.adam);
  const std::size_t V = params.config.vocab;
  const std::size_t n = data.front().ids.size();
  for (std::size_t step = 0; step < opts.steps; ++step) {
    const auto idx = sample_batch(data.size(), opts.batch_size, rng);
    ad::Tensor stacked({idx.size() * n, V}, -K);
    std::vector<int> labels;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& ex = data[idx[b]];
      for (std::size_t i = 0; i < n; ++i) stacked.at(b * n + i, static_cast<std::size_t>(ex.ids[i])) = K;
      labels.push_back(ex.label);
    }
    ad::Tape tape;
    const BoundParams bound(tape, params.store);
    ad::Var loss = ad::cross_entropy(classify_forward(bound, params.config, tape.constant(std::move(stacked)), idx.size()), labels);
    const double lv = loss.value().item();
    check_loss(lv, step, "classifier training");
    auto grads = bound.gradients(tape.backward(loss));
    adam.step(params.store, grads);
    result.losses.push_back(lv);
    if (opts.on_step) opts.on_step(step, lv);
  }
  return result;
}

DenoiserParams reduce_steps(const DenoiserParams& teacher, double ratio, const std::vector<TokenIds>& corpus, double K,
                            const ReduceOptions& opts, TrainResult* result) {
  const int student_T = reduced_length(teacher.config.T, ratio);
  DenoiserParams student = teacher;
  student.config.T = student_T;
  if (opts.steps == 0) return student;
  if (corpus.empty()) throw ConfigError("reduction corpus is empty", "corpus");
  const std::size_t n = corpus.front().size();
  if (opts.prefix >= n) throw ConfigError("prefix must be shorter than the sequence", "reduce.prefix");

  const NoiseSchedule sched = cosine_schedule(student_T, K, opts.cosine_offset);
  const std::size_t V = student.config.vocab;
  const std::size_t per_example = std::min<std::size_t>(opts.sampled_steps, static_cast<std::size_t>(student_T));
  Rng rng(opts.seed);
  Adam adam(student.store, opts.adam);

  for (std::size_t step = 0; step < opts.steps; ++step) {
    const auto idx = sample_batch(corpus.size(), opts.batch_size, rng);
    const std::size_t batch = idx.size();
    // chosen[b][s] marks the rollout steps of example b that enter the loss
    std::vector<std::vector<bool>> chosen(batch, std::vector<bool>(static_cast<std::size_t>(student_T) + 1, false));
    std::vector<std::size_t> all(static_cast<std::size_t>(student_T));
    for (std::size_t b = 0; b < batch; ++b) {
      std::iota(all.begin(), all.end(), std::size_t{1});
      std::shuffle(all.begin(), all.end(), rng.engine());
      for (std::size_t k = 0; k < per_example; ++k) chosen[b][all[k]] = true;
    }

    std::vector<SimplexState> clean, state;
    for (std::size_t b = 0; b < batch; ++b) {
      clean.push_back(encode_tokens(corpus[idx[b]], V, K));
      SimplexState x{ad::Tensor({n, V}, 0.0)};
      for (double& v : x.logits.data()) v = rng.normal(0.0, K);
      for (std::size_t i = 0; i < opts.prefix; ++i)
        std::copy(clean[b].logits.row(i).begin(), clean[b].logits.row(i).end(), x.logits.row(i).begin());
      state.push_back(std::move(x));
    }

    std::vector<ad::Tensor> grad_acc;
    double loss_sum = 0.0;
    const double pair_weight = 1.0 / static_cast<double>(batch * per_example);
    for (int s = student_T; s >= 1; --s) {
      TimestepPlan plan = TimestepPlan::constant(n, s);
      for (std::size_t i = 0; i < opts.prefix; ++i) plan.t[i] = 0;
      std::vector<const SimplexState*> sp;
      std::vector<const TimestepPlan*> pp;
      for (auto& x : state) {
        sp.push_back(&x);
        pp.push_back(&plan);
      }
      ad::Tape tape;
      const BoundParams bound(tape, student.store);
      ad::Var logits = denoise_forward(tape, bound, student.config, sp, pp);

      std::vector<std::size_t> rows;
      std::vector<int> targets;
      std::size_t picked = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        if (!chosen[b][static_cast<std::size_t>(s)]) continue;
        ++picked;
        for (std::size_t i = opts.prefix; i < n; ++i) {
          rows.push_back(b * n + i);
          targets.push_back(corpus[idx[b]][i]);
        }
      }
      if (picked > 0) {
        ad::Var loss = ad::scale(ad::cross_entropy(ad::gather_rows(logits, rows), targets),
                                 static_cast<double>(picked) * pair_weight);
        loss_sum += loss.value().item();
        auto grads = bound.gradients(tape.backward(loss));
        if (grad_acc.empty()) {
          grad_acc = std::move(grads);
        } else {
          for (std::size_t k = 0; k < grads.size(); ++k)
            for (std::size_t i = 0; i < grads[k].size(); ++i) grad_acc[k][i] += grads[k][i];
        }
      }

      // advance the rollout with the student's own samples
      const ad::Tensor& lv = logits.value();
      TimestepPlan next = TimestepPlan::constant(n, s - 1);
      for (std::size_t i = 0; i < opts.prefix; ++i) next.t[i] = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        auto first = lv.data().begin() + static_cast<std::ptrdiff_t>(b * n * V);
        ad::Tensor own({n, V}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n * V)));
        SimplexState proj = project_top_p(own, opts.top_p, K, rng);
        for (std::size_t i = 0; i < opts.prefix; ++i)
          std::copy(clean[b].logits.row(i).begin(), clean[b].logits.row(i).end(), proj.logits.row(i).begin());
        state[b] = reverse_step(proj, next, sched, rng);
      }
    }
    check_loss(loss_sum, step, "step reduction");
    adam.step(student.store, grad_acc);
    if (result) result->losses.push_back(loss_sum);
    if (opts.on_step) opts.on_step(step, loss_sum);
  }
  return student;
}

double rollout_cross_entropy(const DenoiserParams& params, const std::vector<TokenIds>& heldout, double K,
                             const RolloutEval& eval) {
  if (heldout.empty()) throw ContractError("held-out set is empty");
  const std::size_t steps = eval.steps == 0 ? static_cast<std::size_t>(params.config.T) : eval.steps;
  if (steps > static_cast<std::size_t>(params.config.T)) throw ConfigError("inference steps exceed T", "steps");
  const std::size_t n = heldout.front().size();
  if (eval.prefix >= n) throw ConfigError("prefix must be shorter than the sequence", "eval.prefix");
  const std::size_t V = params.config.vocab;
  const NoiseSchedule sched = cosine_schedule(params.config.T, K, eval.cosine_offset);
  Rng rng(eval.seed);
  constexpr std::size_t kChunk = 32;

  double total = 0.0;
  std::size_t terms = 0;
  for (std::size_t start = 0; start < heldout.size(); start += kChunk) {
    const std::size_t batch = std::min(kChunk, heldout.size() - start);
    std::vector<SimplexState> clean, state;
    for (std::size_t b = 0; b < batch; ++b) {
      clean.push_back(encode_tokens(heldout[start + b], V, K));
      SimplexState x{ad::Tensor({n, V}, 0.0)};
      for (double& v : x.logits.data()) v = rng.normal(0.0, K);
      for (std::size_t i = 0; i < eval.prefix; ++i)
        std::copy(clean[b].logits.row(i).begin(), clean[b].logits.row(i).end(), x.logits.row(i).begin());
      state.push_back(std::move(x));
    }
    for (std::size_t s = steps; s >= 1; --s) {
      TimestepPlan plan = TimestepPlan::constant(n, strided_timestep(params.config.T, s, steps));
      for (std::size_t i = 0; i < eval.prefix; ++i) plan.t[i] = 0;
      std::vector<TimestepPlan> plans(batch, plan);
      const auto logits = denoise_batch(params, state, plans);
      TimestepPlan next = TimestepPlan::constant(n, strided_timestep(params.config.T, s - 1, steps));
      for (std::size_t i = 0; i < eval.prefix; ++i) next.t[i] = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        double ce = 0.0;
        for (std::size_t i = eval.prefix; i < n; ++i) {
          auto row = logits[b].row(i);
          const double mx = *std::max_element(row.begin(), row.end());
          double z = 0.0;
          for (double v : row) z += std::exp(v - mx);
          ce -= row[static_cast<std::size_t>(heldout[start + b][i])] - mx - std::log(z);
        }
        total += ce / static_cast<double>(n - eval.prefix);
        ++terms;
        SimplexState proj = project_top_p(logits[b], eval.top_p, K, rng);
        for (std::size_t i = 0; i < eval.prefix; ++i)
          std::copy(clean[b].logits.row(i).begin(), clean[b].logits.row(i).end(), proj.logits.row(i).begin());
        state[b] = reverse_step(proj, next, sched, rng);
      }
    }
  }
  return total / static_cast<double>(terms);
}

}  // namespace tta
