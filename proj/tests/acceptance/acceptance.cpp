// Acceptance runner: one PASS/FAIL line per criterion. Trains the toy stack
// through the CLI stages, then measures every criterion in order.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "oracles.hpp"
#include "tta/allocation.hpp"
#include "tta/corpus.hpp"
#include "tta/diffusion.hpp"
#include "tta/guidance.hpp"
#include "tta/metrics.hpp"
#include "tta/models.hpp"
#include "tta_cli/commands.hpp"
#include "tta_cli/config.hpp"

using namespace tta;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& body) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  if (!o.pass) ++failures;
  char buf[64];
  std::snprintf(buf, sizeof buf, " (%.1f s)", secs);
  std::cout << (o.pass ? "[PASS]" : "[FAIL]") << " criterion " << id << ": " << title << " | " << o.detail << buf
            << std::endl;
}

std::string sci(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string num(double v, int prec = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Everything the model-level criteria share.
struct Stack {
  cli::RunConfig cfg;
  fs::path dir;
  Corpus corpus;
  Split parts;
  DenoiserParams den;
  ClassifierParams clf;
  ClassifierParams judge;
  ReferenceLM lm;
  NoiseSchedule sched;
};

struct Sample {
  TokenIds tokens;
  bool on_target = false;
  double ppl = 0.0;
  double fluct = 0.0;
  double key_change = 0.0;
};

/// `count` generations with seeds derive(master, i); guided when lambda is set.
std::vector<Sample> batch(const Stack& s, PolicyKind kind, std::optional<double> lambda, std::size_t count,
                          std::optional<LexicalConstraint> constraint = std::nullopt) {
  SchedulePolicy policy;
  policy.kind = kind;
  GuidanceConfig g;
  g.target_label = 1;
  if (lambda) g.lambda = *lambda;
  GenerateOptions opts;
  opts.steps = static_cast<std::size_t>(s.den.config.T);
  opts.seq_len = s.corpus.spec.seq_len;
  opts.key_k = 5;
  opts.constraint = constraint;
  std::vector<Sample> out;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(Rng::derive(4242, i));
    const auto gen = generate(s.den, lambda ? &s.clf : nullptr, s.sched, policy, lambda ? &g : nullptr, opts, rng);
    Sample x;
    x.tokens = gen.tokens;
    const auto probs = classify(s.judge, encode_tokens(gen.tokens, s.corpus.spec.vocab, s.cfg.schedule.K));
    x.on_target = probs[1] > probs[0];
    x.ppl = reference_perplexity(s.lm, gen.tokens);
    x.fluct = mean_fluctuation(gen.trace);
    x.key_change = mean_key_token_change(gen.trace, 5).value_or(0.0);
    out.push_back(std::move(x));
  }
  return out;
}

double accuracy(const std::vector<Sample>& v) {
  double a = 0.0;
  for (const auto& x : v) a += x.on_target ? 1.0 : 0.0;
  return a / static_cast<double>(v.size());
}

template <typename F>
double mean_by(const std::vector<Sample>& v, F f) {
  double a = 0.0;
  for (const auto& x : v) a += f(x);
  return a / static_cast<double>(v.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string workdir = (fs::temp_directory_path() / "tta_acceptance").string();
  bool fresh = false;
  std::size_t samples = 200;
  app.add_option("--workdir", workdir, "directory for trained artifacts");
  app.add_flag("--fresh", fresh, "discard artifacts from an earlier run");
  app.add_option("--samples", samples, "generations per condition for criteria 8 and 9");
  CLI11_PARSE(app, argc, argv);
  std::cout.setf(std::ios::unitbuf);

  // ---- trained stack -----------------------------------------------------------

  Stack s;
  s.dir = workdir;
  if (fresh) fs::remove_all(s.dir);
  fs::create_directories(s.dir);
  s.cfg.output_dir = s.dir.string();
  s.cfg.generation.classifier = (s.dir / "classifier.ckpt").string();
  const auto train_start = Clock::now();
  std::ostringstream log;
  const bool have = fs::exists(s.dir / "denoiser.ckpt") && fs::exists(s.dir / "student_T16.ckpt") &&
                    fs::exists(s.dir / "reduce_report.json");
  try {
    if (!have) {
      cli::cmd_train(s.cfg, log);
      cli::cmd_reduce(s.cfg, log);
    }
  } catch (const std::exception& e) {
    std::cout << "training failed: " << e.what() << "\n" << log.str();
    return 1;
  }
  const double train_secs = std::chrono::duration<double>(Clock::now() - train_start).count();
  std::cout << "trained stack in " << num(train_secs, 1) << " s" << (have ? " (reused)" : "") << std::endl;

  s.corpus = load_corpus((s.dir / "corpus.jsonl").string());
  s.parts = split(s.corpus.examples, s.cfg.corpus.split_ratio, s.cfg.corpus.split_seed);
  s.den = load_denoiser((s.dir / "denoiser.ckpt").string());
  s.clf = load_classifier((s.dir / "classifier.ckpt").string());
  s.judge = load_classifier((s.dir / "eval_classifier.ckpt").string());
  s.lm = ReferenceLM::fit(sequences_of(s.parts.train), s.corpus.spec.vocab);
  s.sched = cosine_schedule(s.den.config.T, s.cfg.schedule.K, s.cfg.schedule.s);

  report(1, "autodiff finite differences", [] {
    double worst_op = 0.0;
    std::string worst_name;
    for (const auto& op : test::differentiable_ops()) {
      const double e = test::op_fd_error(op, 20);
      if (e > worst_op) {
        worst_op = e;
        worst_name = op.name;
      }
    }
    DenoiserConfig dc;
    dc.vocab = 10;
    dc.d_model = 8;
    dc.heads = 2;
    dc.ff = 12;
    dc.blocks = 2;
    dc.max_len = 6;
    dc.T = 16;
    const double e2e = test::denoiser_fd_error(dc, 3);
    return Outcome{worst_op < 1e-4 && e2e < 1e-3, "worst op " + worst_name + " " + sci(worst_op) +
                                                      " (< 1e-4); 2-block denoiser " + sci(e2e) +
                                                      " (< 1e-3)"};
  });

  report(2, "cosine schedule invariants", [] {
    bool ok = true;
    for (int T : {8, 50, 64, 1000}) {
      const auto s = cosine_schedule(T, 5.0);
      ok = ok && s.alpha_bar[0] == 1.0;
      for (int t = 1; t <= T; ++t) {
        ok = ok && s.alpha_bar[static_cast<std::size_t>(t)] < s.alpha_bar[static_cast<std::size_t>(t - 1)];
        if (t > 1) ok = ok && s.injected_variance(t) > s.injected_variance(t - 1);
      }
    }
    return Outcome{ok, "T in {8, 50, 64, 1000}: alpha_bar_0 = 1, strictly decreasing, injected variance increasing"};
  });

  report(3, "simplex round trip and frozen tokens", [&] {
    bool round = true;
    TokenIds all;
    for (std::size_t v = 0; v < s.corpus.spec.vocab; ++v) all.push_back(static_cast<int>(v));
    round = decode(encode_tokens(all, s.corpus.spec.vocab, s.cfg.schedule.K)) == all;
    // linear plans keep position 0 at timestep 0; lambda 0 leaves guidance inert
    SchedulePolicy lin;
    lin.kind = PolicyKind::linear;
    GuidanceConfig g;
    g.lambda = 0.0;
    GenerateOptions opts;
    opts.steps = 64;
    opts.seq_len = s.corpus.spec.seq_len;
    long frozen_checks = 0, broken = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      const auto gen = generate(s.den, &s.clf, s.sched, lin, &g, opts, rng);
      const auto& steps = gen.trace.steps;
      for (std::size_t k = 0; k < steps.size(); ++k) {
        for (std::size_t i = 0; i < opts.seq_len; ++i) {
          if (steps[k].plan[i] != 0) continue;
          for (std::size_t later = k + 1; later < steps.size(); ++later) {
            ++frozen_checks;
            if (steps[later].tokens[i] != steps[k].tokens[i]) ++broken;
          }
          ++frozen_checks;
          if (gen.tokens[i] != steps[k].tokens[i]) ++broken;
        }
      }
    }
    return Outcome{round && broken == 0 && frozen_checks > 0,
                   std::string("decode(encode) over V=64 ") + (round ? "identity" : "broken") + "; " +
                       std::to_string(frozen_checks) + " frozen-token comparisons, " + std::to_string(broken) +
                       " changed"};
  });

  report(4, "allocation formulas", [] {
    SchedulePolicy lin;
    lin.kind = PolicyKind::linear;
    Rng rng(1);
    const auto plan = allocate(lin, 100, 100, 5, nullptr, rng);
    const bool lin_ok = plan.t == std::vector<int>{0, 25, 50, 75, 100};
    SchedulePolicy ad;
    ad.kind = PolicyKind::adaptive;
    ad.alpha_smooth = 0.6;
    const auto g = normalize_scores({1.0, 3.0, 2.0});
    const bool ad_ok = allocate(ad, 100, 100, 3, &g, rng).t == std::vector<int>{100, 60, 80};
    ad.alpha_smooth = 1.0;
    bool endpoint = true;
    Rng srng(9);
    for (int rep = 0; rep < 200; ++rep) {
      std::vector<double> raw(16);
      for (double& v : raw) v = srng.uniform() * 10.0;
      const auto sc = normalize_scores(raw);
      const int t = static_cast<int>(srng.uniform_int(0, 64));
      endpoint = endpoint && allocate(ad, t, 64, 16, &sc, rng) == TimestepPlan::constant(16, t);
    }
    return Outcome{lin_ok && ad_ok && endpoint, std::string("linear ") + (lin_ok ? "ok" : "wrong") + ", adaptive " +
                                                    (ad_ok ? "ok" : "wrong") + ", smoothing 1 = constant on 200 draws " +
                                                    (endpoint ? "ok" : "wrong")};
  });

  report(5, "budgeted allocation vs grid search", [] {
    Rng rng(21);
    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
      const auto g = test::random_grid_instance(inst, rng);
      const auto p = g.problem();
      const double solved = allocation_objective(p, solve_budgeted_allocation(p));
      worst = std::max(worst, std::abs(solved - test::grid_oracle(g.weights_milli, g.budget, g.lo, g.hi)));
    }
    return Outcome{worst < 1e-6, "50 instances, N <= 4, worst objective gap " + sci(worst)};
  });

  report(6, "continuous/discrete duality", [] {
    const bool ends = duality_alpha_tilde(0.0) == 0.0 && duality_alpha_tilde(1.0) == 1.0 &&
                      duality_schedule(0.0, 64).alpha_disc == 0.0 && duality_schedule(1.0, 64).alpha_disc == 1.0;
    double worst_z = 0.0;
    for (int k = 1; k <= 9; ++k) {
      const double ab = k / 10.0;
      const auto d = duality_schedule(ab, 2, 100000, 100 + static_cast<std::uint64_t>(k));
      worst_z = std::max(worst_z, std::abs(d.alpha_disc - test::two_class_alpha_disc(ab)) / d.std_error);
    }
    bool mono = true;
    DualityPoint prev;
    prev.alpha_disc = -1.0;
    for (int k = 0; k <= 20; ++k) {
      const auto d = duality_schedule(k / 20.0, 64, 100000, 500 + static_cast<std::uint64_t>(k));
      mono = mono && d.alpha_disc >= prev.alpha_disc - 3.0 * std::max(d.std_error, prev.std_error);
      prev = d;
    }
    return Outcome{ends && worst_z < 3.0 && mono,
                   std::string("endpoints ") + (ends ? "exact" : "wrong") + "; V=2 worst |z| " + num(worst_z, 2) +
                       " (< 3); V=64 monotone within 3 s.e. " + (mono ? "yes" : "no")};
  });

  report(7, "Pinsker lower bound vs exact KL", [] {
    long checked = 0, bad = 0;
    for (int k = 2; k <= 4; ++k) {
      const auto s = test::pinsker_sweep(k);
      checked += s.checked;
      bad += s.violations;
    }
    return Outcome{bad == 0 && checked > 0, std::to_string(checked) + " pairs x statistics, " + std::to_string(bad) +
                                                " violations"};
  });

  // shared generations for criteria 8-10
  const std::vector<double> lambdas{250.0, 750.0, 2000.0};
  std::vector<Sample> unguided, adaptive;
  std::vector<std::vector<Sample>> constant;
  const auto gen_start = Clock::now();
  unguided = batch(s, PolicyKind::constant, std::nullopt, samples);
  for (double lam : lambdas) constant.push_back(batch(s, PolicyKind::constant, lam, samples));
  adaptive = batch(s, PolicyKind::adaptive, 2000.0, samples);
  std::cout << "generated " << samples * 5 << " samples in "
            << num(std::chrono::duration<double>(Clock::now() - gen_start).count(), 1) << " s" << std::endl;

  report(8, "control trend over lambda", [&] {
    const double base = accuracy(unguided);
    std::vector<double> acc;
    for (const auto& c : constant) acc.push_back(accuracy(c));
    bool mono = true;
    for (std::size_t i = 1; i < acc.size(); ++i) mono = mono && acc[i] >= acc[i - 1] - 0.02;
    const double gain = acc.back() - base;
    return Outcome{gain >= 0.20 && mono, "unguided " + num(base, 3) + ", lambda 250/750/2000: " + num(acc[0], 3) +
                                             "/" + num(acc[1], 3) + "/" + num(acc[2], 3) + ", gain " + num(gain, 3) +
                                             " (>= 0.20), nondecreasing within 0.02 " + (mono ? "yes" : "no")};
  });

  report(9, "adaptive vs constant allocation", [&] {
    const auto& con = constant.back();
    std::size_t wf = 0, wk = 0, wp = 0;
    for (std::size_t i = 0; i < samples; ++i) {
      wf += adaptive[i].fluct <= con[i].fluct ? 1 : 0;
      wk += adaptive[i].key_change <= con[i].key_change ? 1 : 0;
      wp += adaptive[i].ppl <= con[i].ppl ? 1 : 0;
    }
    const double n = static_cast<double>(samples);
    const double mf[2] = {mean_by(adaptive, [](const Sample& x) { return x.fluct; }),
                          mean_by(con, [](const Sample& x) { return x.fluct; })};
    const double mk[2] = {mean_by(adaptive, [](const Sample& x) { return x.key_change; }),
                          mean_by(con, [](const Sample& x) { return x.key_change; })};
    const double mp[2] = {mean_by(adaptive, [](const Sample& x) { return x.ppl; }),
                          mean_by(con, [](const Sample& x) { return x.ppl; })};
    const bool ok = wf / n >= 0.6 && wk / n >= 0.6 && wp / n >= 0.6 && mf[0] <= mf[1] && mk[0] <= mk[1] && mp[0] <= mp[1];
    return Outcome{ok, "fluctuation " + num(mf[0], 3) + " vs " + num(mf[1], 3) + " (wins " + num(wf / n, 2) +
                           "), key change " + num(mk[0], 3) + " vs " + num(mk[1], 3) + " (wins " + num(wk / n, 2) +
                           "), ppl " + num(mp[0], 1) + " vs " + num(mp[1], 1) + " (wins " + num(wp / n, 2) + ")"};
  });

  report(10, "fluctuation-fluency binned correlation", [&] {
    std::vector<double> fl, pp;
    for (const auto* set : {&constant[0], &constant[1], &constant[2], &adaptive}) {
      for (const auto& x : *set) {
        fl.push_back(x.fluct);
        pp.push_back(x.ppl);
      }
    }
    const double r = binned_correlation(fl, pp, 10);
    return Outcome{fl.size() >= 150 && r >= 0.3,
                   std::to_string(fl.size()) + " guided generations, 10 bins, r = " + num(r, 3) + " (>= 0.3)"};
  });

  report(11, "progressive step reduction 64 -> 16", [&] {
    const json rep = json::parse(slurp(s.dir / "reduce_report.json"));
    const double full = rep.at("teacher_ce_full").get<double>();
    double student = -1.0, teacher16 = -1.0;
    for (const auto& st : rep.at("students")) {
      if (st.at("T").get<int>() == 16) {
        student = st.at("student_ce").get<double>();
        teacher16 = st.at("teacher_ce_same_steps").get<double>();
      }
    }
    const bool ok = student >= 0.0 && student <= 1.15 * teacher16 && student <= 1.3 * full;
    return Outcome{ok, "student@16 " + num(student) + ", teacher@16 " + num(teacher16) + ", teacher@64 " + num(full) +
                           " (student <= 1.15x teacher@16 and <= 1.3x teacher@64)"};
  });

  report(12, "length constraint", [&] {
    LexicalConstraint lc;
    lc.eos_position = 11;
    lc.eos_token = 0;
    const auto v = batch(s, PolicyKind::adaptive, 2000.0, 100, lc);
    std::size_t hit = 0;
    for (const auto& x : v) hit += x.tokens[static_cast<std::size_t>(lc.eos_position)] == lc.eos_token ? 1 : 0;
    return Outcome{hit == v.size(), std::to_string(hit) + "/" + std::to_string(v.size()) +
                                        " generations end with token 0 at position 11"};
  });

  report(13, "generate determinism", [&] {
    cli::RunConfig g = s.cfg;
    g.output_dir = (s.dir / "determinism").string();
    g.generation.samples = 20;
    g.generation.denoiser = (s.dir / "denoiser.ckpt").string();
    g.generation.policy.kind = PolicyKind::adaptive;
    fs::remove_all(g.output_dir);
    std::ostringstream sink;
    auto snapshot = [&] {
      std::vector<std::string> files{slurp(fs::path(g.output_dir) / "samples.jsonl")};
      for (std::size_t i = 0; i < g.generation.samples; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%05zu.jsonl", i);
        files.push_back(slurp(fs::path(g.output_dir) / "traces" / name));
      }
      return files;
    };
    cli::cmd_generate(g, sink);
    const auto first = snapshot();
    cli::cmd_generate(g, sink);
    const auto second = snapshot();
    std::size_t same = 0;
    for (std::size_t i = 0; i < first.size(); ++i) same += (first[i] == second[i] && !first[i].empty()) ? 1 : 0;
    return Outcome{same == first.size(), std::to_string(same) + "/" + std::to_string(first.size()) +
                                             " files byte-identical across two runs"};
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
