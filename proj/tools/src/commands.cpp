#include "tta_cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tta/error.hpp"
#include "tta/metrics.hpp"
#include "tta/models.hpp"

#ifndef TTA_CODE_VERSION
#define TTA_CODE_VERSION "unknown"
#endif

namespace tta::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string code_version() { return TTA_CODE_VERSION; }

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw Error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Sidecar next to a binary or CSV artifact so every artifact carries the hash.
void write_meta(const fs::path& artifact, const RunConfig& cfg, const std::string& stage, ordered_json extra = {}) {
  ordered_json j;
  j["config_hash"] = cfg.hash();
  j["stage"] = stage;
  j["code_version"] = code_version();
  if (!extra.is_null()) j["details"] = std::move(extra);
  write_text(artifact.string() + ".meta.json", j.dump(2) + "\n");
}

fs::path out_dir(const RunConfig& cfg) { return fs::path(cfg.output_dir); }

void require_file(const std::string& path, const std::string& field) {
  if (path.empty()) throw ConfigError("path is required", field);
  if (!fs::is_regular_file(path)) throw ConfigError("file does not exist: " + path, field);
}

Corpus resolve_corpus(const RunConfig& cfg) {
  if (!cfg.corpus.path.empty()) {
    require_file(cfg.corpus.path, "corpus.path");
    return load_corpus(cfg.corpus.path);
  }
  return Corpus{cfg.corpus.spec, synthesize(cfg.corpus.spec)};
}

int label_index(const CorpusSpec& spec, const std::string& name) {
  const auto it = std::find(spec.labels.begin(), spec.labels.end(), name);
  if (it == spec.labels.end()) throw ConfigError("'" + name + "' is not a corpus label", "generation.target_label");
  return static_cast<int>(it - spec.labels.begin());
}

std::string denoiser_path(const RunConfig& cfg, const std::string& explicit_path) {
  return explicit_path.empty() ? (out_dir(cfg) / "denoiser.ckpt").string() : explicit_path;
}

/// Adds `record` to <out>/manifest.json, replacing an earlier entry of the same stage.
void record_stage(const RunConfig& cfg, const StageRecord& record) {
  const fs::path path = out_dir(cfg) / "manifest.json";
  ordered_json m;
  if (fs::exists(path)) {
    try {
      m = ordered_json::parse(read_text(path));
    } catch (const json::exception&) {
      m = ordered_json();
    }
  }
  if (!m.is_object() || !m.contains("stages") || !m["stages"].is_object()) {
    m = ordered_json::object();
    m["stages"] = ordered_json::object();
  }
  m["code_version"] = code_version();
  ordered_json s;
  s["config_hash"] = cfg.hash();
  s["config"] = ordered_json::parse(cfg.to_json());
  ordered_json arts = ordered_json::array();
  for (const auto& a : record.artifacts) arts.push_back({{"path", a.path}, {"kind", a.kind}});
  s["artifacts"] = arts;
  s["wall_clock_s"] = record.wall_clock_s;
  ordered_json seeds = ordered_json::object();
  for (const auto& [name, value] : record.seeds) seeds[name] = value;
  s["seeds"] = seeds;
  m["stages"][record.stage] = s;
  m["config_hash"] = cfg.hash();
  write_text(path, m.dump(2) + "\n");
}

DenoiserConfig denoiser_config(const RunConfig& cfg, const CorpusSpec& spec) {
  DenoiserConfig c;
  c.vocab = spec.vocab;
  c.d_model = cfg.model.d_model;
  c.heads = cfg.model.heads;
  c.ff = cfg.model.ff;
  c.blocks = cfg.model.blocks;
  c.max_len = spec.seq_len;
  c.T = cfg.schedule.T;
  c.positional = cfg.model.positional;
  return c;
}

std::function<void(std::size_t, double)> progress(std::ostream& log, const std::string& what, std::size_t every) {
  return [&log, what, every, sum = 0.0](std::size_t step, double loss) mutable {
    sum += loss;
    if ((step + 1) % every == 0) {
      log << what << " step " << step + 1 << " loss " << sum / static_cast<double>(every) << "\n";
      log.flush();
      sum = 0.0;
    }
  };
}

}  // namespace

// ---- train ----------------------------------------------------------------------

StageRecord cmd_train(const RunConfig& cfg, std::ostream& log) {
  const auto start = Clock::now();
  StageRecord rec;
  rec.stage = "train";
  const fs::path out = out_dir(cfg);
  fs::create_directories(out);

  const Corpus corpus = resolve_corpus(cfg);
  if (cfg.corpus.path.empty()) {
    save_corpus((out / "corpus.jsonl").string(), corpus);
    write_meta(out / "corpus.jsonl", cfg, "train");
    rec.artifacts.push_back({"corpus.jsonl", "corpus"});
  }
  const Split parts = split(corpus.examples, cfg.corpus.split_ratio, cfg.corpus.split_seed);
  rec.seeds.emplace_back("split", cfg.corpus.split_seed);
  const auto sched = cosine_schedule(cfg.schedule.T, cfg.schedule.K, cfg.schedule.s);

  const std::uint64_t init_seed = Rng::derive(cfg.seed, 1);
  const std::uint64_t train_seed = Rng::derive(cfg.seed, 2);
  Rng init_rng(init_seed);
  DenoiserParams den = init_denoiser(denoiser_config(cfg, corpus.spec), init_rng);
  TrainOptions opts;
  opts.steps = cfg.train.steps;
  opts.batch_size = cfg.train.batch_size;
  opts.adam.lr = cfg.train.lr;
  opts.adam.clip_norm = cfg.train.clip_norm;
  opts.seed = train_seed;
  opts.max_prefix = cfg.train.max_prefix;
  opts.mixed_plan_prob = cfg.train.mixed_plan_prob;
  opts.on_step = progress(log, "denoiser", 1000);
  const auto res = train_denoiser(den, sequences_of(parts.train), sched, opts);
  save_checkpoint((out / "denoiser.ckpt").string(), den);
  write_meta(out / "denoiser.ckpt", cfg, "train",
             {{"final_loss", res.losses.empty() ? 0.0 : res.losses.back()}, {"steps", cfg.train.steps}});
  rec.artifacts.push_back({"denoiser.ckpt", "denoiser"});
  rec.seeds.emplace_back("denoiser_init", init_seed);
  rec.seeds.emplace_back("denoiser_train", train_seed);

  // guidance classifier and a wider, separately seeded evaluation classifier
  struct Job {
    const char* name;
    std::size_t width;
    std::uint64_t index;
  };
  for (const Job& job : {Job{"classifier", cfg.model.classifier_d_model, 3},
                         Job{"eval_classifier", cfg.model.eval_classifier_d_model, 5}}) {
    const std::uint64_t cinit = Rng::derive(cfg.seed, job.index);
    const std::uint64_t ctrain = Rng::derive(cfg.seed, job.index + 1);
    Rng rng(cinit);
    ClassifierConfig cc;
    cc.vocab = corpus.spec.vocab;
    cc.d_model = job.width;
    cc.labels = corpus.spec.labels.size();
    cc.temperature = cfg.model.classifier_temperature;
    ClassifierParams clf = init_classifier(cc, rng);
    TrainOptions co;
    co.steps = cfg.train.classifier_steps;
    co.batch_size = cfg.train.classifier_batch_size;
    co.adam.lr = cfg.train.lr;
    co.adam.clip_norm = cfg.train.clip_norm;
    co.seed = ctrain;
    train_classifier(clf, parts.train, cfg.schedule.K, co);
    const double acc = parts.test.empty() ? 0.0 : classifier_accuracy(clf, parts.test, cfg.schedule.K);
    log << job.name << " held-out accuracy " << acc << "\n";
    const std::string file = std::string(job.name) + ".ckpt";
    save_checkpoint((out / file).string(), clf);
    write_meta(out / file, cfg, "train", {{"heldout_accuracy", acc}});
    rec.artifacts.push_back({file, job.name});
    rec.seeds.emplace_back(std::string(job.name) + "_init", cinit);
    rec.seeds.emplace_back(std::string(job.name) + "_train", ctrain);
  }
  rec.wall_clock_s = seconds_since(start);
  record_stage(cfg, rec);
  return rec;
}

// ---- reduce ---------------------------------------------------------------------

StageRecord cmd_reduce(const RunConfig& cfg, std::ostream& log) {
  const auto start = Clock::now();
  StageRecord rec;
  rec.stage = "reduce";
  const fs::path out = out_dir(cfg);
  const std::string teacher_path = denoiser_path(cfg, cfg.reduce.teacher);
  require_file(teacher_path, "reduce.teacher");
  const DenoiserParams teacher = load_denoiser(teacher_path);
  fs::create_directories(out);

  const Corpus corpus = resolve_corpus(cfg);
  const Split parts = split(corpus.examples, cfg.corpus.split_ratio, cfg.corpus.split_seed);
  const auto train_seqs = sequences_of(parts.train);
  auto heldout = sequences_of(parts.test.empty() ? parts.train : parts.test);
  if (heldout.size() > cfg.reduce.eval_examples) heldout.resize(cfg.reduce.eval_examples);

  RolloutEval ev;
  ev.prefix = cfg.reduce.prefix;
  ev.top_p = cfg.reduce.top_p;
  ev.cosine_offset = cfg.schedule.s;
  ev.seed = Rng::derive(cfg.seed, 20);
  rec.seeds.emplace_back("eval", ev.seed);

  ordered_json report;
  report["teacher"] = teacher_path;
  report["teacher_T"] = teacher.config.T;
  ev.steps = static_cast<std::size_t>(teacher.config.T);
  report["teacher_ce_full"] = rollout_cross_entropy(teacher, heldout, cfg.schedule.K, ev);
  ordered_json students = ordered_json::array();

  DenoiserParams prev = teacher;
  for (std::size_t i = 0; i < cfg.reduce.ladder.size(); ++i) {
    const int target = reduced_length(teacher.config.T, cfg.reduce.ladder[i]);
    const double ratio = static_cast<double>(target) / static_cast<double>(prev.config.T);
    ReduceOptions ro;
    ro.steps = cfg.reduce.steps;
    ro.batch_size = cfg.reduce.batch_size;
    ro.sampled_steps = cfg.reduce.sampled_steps;
    ro.prefix = cfg.reduce.prefix;
    ro.top_p = cfg.reduce.top_p;
    ro.cosine_offset = cfg.schedule.s;
    ro.adam.lr = cfg.reduce.lr;
    ro.adam.clip_norm = cfg.train.clip_norm;
    ro.seed = Rng::derive(cfg.seed, 30 + i);
    ro.on_step = progress(log, "reduce T=" + std::to_string(target), 100);
    DenoiserParams student = reduce_steps(prev, ratio, train_seqs, cfg.schedule.K, ro);
    rec.seeds.emplace_back("reduce_" + std::to_string(target), ro.seed);

    ev.steps = static_cast<std::size_t>(target);
    const double student_ce = rollout_cross_entropy(student, heldout, cfg.schedule.K, ev);
    const double teacher_ce = rollout_cross_entropy(teacher, heldout, cfg.schedule.K, ev);
    log << "student T=" << target << " ce " << student_ce << " teacher@" << target << " ce " << teacher_ce << "\n";

    const std::string file = "student_T" + std::to_string(target) + ".ckpt";
    save_checkpoint((out / file).string(), student);
    write_meta(out / file, cfg, "reduce",
               {{"T", target}, {"initialized_from", i == 0 ? teacher_path : students.back()["checkpoint"].get<std::string>()}});
    rec.artifacts.push_back({file, "student"});
    students.push_back({{"checkpoint", file},
                        {"ratio", cfg.reduce.ladder[i]},
                        {"T", target},
                        {"student_ce", student_ce},
                        {"teacher_ce_same_steps", teacher_ce}});
    prev = std::move(student);
  }
  report["students"] = students;
  report["config_hash"] = cfg.hash();
  write_text(out / "reduce_report.json", report.dump(2) + "\n");
  rec.artifacts.push_back({"reduce_report.json", "report"});
  rec.wall_clock_s = seconds_since(start);
  record_stage(cfg, rec);
  return rec;
}

// ---- generate -------------------------------------------------------------------

StageRecord cmd_generate(const RunConfig& cfg, std::ostream& log) {
  const auto start = Clock::now();
  StageRecord rec;
  rec.stage = "generate";
  const auto& g = cfg.generation;
  const fs::path out = out_dir(cfg);

  const std::string den_path = denoiser_path(cfg, g.denoiser);
  require_file(den_path, "generation.denoiser");
  const DenoiserParams den = load_denoiser(den_path);
  std::optional<ClassifierParams> clf;
  if (!g.classifier.empty()) {
    require_file(g.classifier, "generation.classifier");
    clf = load_classifier(g.classifier);
  }
  if (g.policy.kind == PolicyKind::adaptive && !clf) {
    throw ConfigError("generation.policy.kind 'adaptive' requires a classifier checkpoint", "generation.classifier");
  }

  const Corpus corpus = resolve_corpus(cfg);
  GuidanceConfig gc;
  gc.lambda = g.lambda;
  gc.target_label = label_index(corpus.spec, g.target_label);
  gc.iterations = g.iterations;
  gc.window = g.window;
  GenerateOptions go;
  go.steps = g.steps;
  go.seq_len = corpus.spec.seq_len;
  go.top_p = g.top_p;
  go.key_k = g.key_k;
  go.prompt = g.prompt;
  if (g.constraint) {
    LexicalConstraint lc;
    lc.eos_position = g.constraint->eos_position;
    lc.eos_token = g.constraint->eos_token;
    go.constraint = lc;
  }
  const auto sched = cosine_schedule(den.config.T, cfg.schedule.K, cfg.schedule.s);

  fs::create_directories(out / "traces");
  const std::string hash = cfg.hash();
  std::string samples;
  for (std::size_t i = 0; i < g.samples; ++i) {
    const std::uint64_t seed = Rng::derive(cfg.seed, i);
    Rng rng(seed);
    const Generation gen =
        generate(den, clf ? &*clf : nullptr, sched, g.policy, clf ? &gc : nullptr, go, rng);
    char name[32];
    std::snprintf(name, sizeof name, "sample_%05zu.jsonl", i);
    write_text(out / "traces" / name, gen.trace.to_jsonl());
    ordered_json line;
    line["index"] = i;
    line["seed"] = seed;
    line["tokens"] = gen.tokens;
    line["policy"] = to_string(g.policy.kind);
    line["lambda"] = clf ? g.lambda : 0.0;
    line["target_label"] = g.target_label;
    line["trace"] = std::string("traces/") + name;
    line["config_hash"] = hash;
    samples += line.dump() + "\n";
    if ((i + 1) % 50 == 0) log << "generated " << i + 1 << "/" << g.samples << "\n";
  }
  write_text(out / "samples.jsonl", samples);
  write_meta(out / "traces", cfg, "generate", {{"count", g.samples}});
  rec.artifacts.push_back({"samples.jsonl", "samples"});
  rec.artifacts.push_back({"traces", "trace_dir"});
  rec.seeds.emplace_back("master", cfg.seed);
  if (g.policy.kind == PolicyKind::random) rec.seeds.emplace_back("policy", g.policy.seed);
  rec.wall_clock_s = seconds_since(start);
  record_stage(cfg, rec);
  return rec;
}

// ---- analyze --------------------------------------------------------------------

namespace {

struct RunData {
  std::string name;
  std::vector<GenerationTrace> traces;
  std::vector<TokenIds> finals;
};

RunData load_run(const fs::path& dir) {
  RunData run;
  run.name = dir.filename().string();
  if (run.name.empty()) run.name = dir.parent_path().filename().string();
  const fs::path traces = dir / "traces";
  if (!fs::is_directory(traces)) throw ConfigError("no traces directory in " + dir.string(), "analyze.runs");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(traces)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  if (files.empty()) throw ConfigError("no trace files in " + traces.string(), "analyze.runs");
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream is(f, std::ios::binary);
    try {
      run.traces.push_back(GenerationTrace::read_jsonl(is));
    } catch (const TraceError& e) {
      throw TraceError(f.string() + ": " + e.what());
    }
    if (run.traces.back().steps.empty()) throw TraceError(f.string() + ": trace has no records");
  }
  // final tokens come from samples.jsonl when present, else the last record
  std::map<std::string, TokenIds> by_trace;
  const fs::path samples = dir / "samples.jsonl";
  if (fs::exists(samples)) {
    std::ifstream is(samples);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto j = json::parse(line);
      if (j.contains("trace") && j.contains("tokens")) {
        by_trace[fs::path(j.at("trace").get<std::string>()).filename().string()] = j.at("tokens").get<TokenIds>();
      }
    }
  }
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto it = by_trace.find(files[i].filename().string());
    run.finals.push_back(it != by_trace.end() ? it->second : run.traces[i].steps.back().tokens);
  }
  return run;
}

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

StageRecord cmd_analyze(const RunConfig& cfg, std::ostream& log) {
  const auto start = Clock::now();
  StageRecord rec;
  rec.stage = "analyze";
  if (cfg.analyze.runs.empty()) throw ConfigError("at least one run directory is required", "analyze.runs");
  std::vector<RunData> runs;
  for (const auto& r : cfg.analyze.runs) {
    if (!fs::is_directory(r)) throw ConfigError("directory does not exist: " + r, "analyze.runs");
    runs.push_back(load_run(r));
  }
  const fs::path out = out_dir(cfg);
  fs::create_directories(out);

  const Corpus corpus = resolve_corpus(cfg);
  const Split parts = split(corpus.examples, cfg.corpus.split_ratio, cfg.corpus.split_seed);
  const ReferenceLM lm = ReferenceLM::fit(sequences_of(parts.train), corpus.spec.vocab);

  ordered_json summary = ordered_json::object();
  std::string comparison = "run,fluctuation_ratio,key_token_change_ratio,ppl,dist3\n";
  std::map<std::string, int> seen_names;
  for (const auto& run : runs) {
    std::string name = run.name;
    if (seen_names[name]++ > 0) name += "_" + std::to_string(seen_names[name] - 1);

    // per-step means across the run's samples
    std::map<int, std::array<std::vector<double>, 6>> cols;
    std::vector<double> flucts, keys, ppls;
    for (std::size_t i = 0; i < run.traces.size(); ++i) {
      for (const auto& m : analyze_trace(run.traces[i], cfg.analyze.k)) {
        auto& c = cols[m.step];
        const std::optional<double>* vals[6] = {&m.R_t,        &m.mean_R,           &m.key_change_ratio,
                                                &m.conf_after, &m.conf_before_next, &m.conf_drop};
        for (int q = 0; q < 6; ++q)
          if (*vals[q]) c[static_cast<std::size_t>(q)].push_back(**vals[q]);
      }
      if (run.traces[i].steps.size() >= 2) flucts.push_back(mean_fluctuation(run.traces[i]));
      if (auto kc = mean_key_token_change(run.traces[i], cfg.analyze.k)) keys.push_back(*kc);
      ppls.push_back(reference_perplexity(lm, run.finals[i]));
    }
    std::string csv = "step,R_t,mean_R,key_change_ratio,conf_after,conf_before_next,drop\n";
    for (const auto& [step, c] : cols) {
      csv += std::to_string(step);
      for (const auto& v : c) csv += "," + fmt_opt(mean_of(v));
      csv += "\n";
    }
    const fs::path step_csv = out / name / "steps.csv";
    write_text(step_csv, csv);
    write_meta(step_csv, cfg, "analyze", {{"source", run.name}});
    rec.artifacts.push_back({(fs::path(name) / "steps.csv").string(), "step_csv"});

    std::optional<double> dist3;
    try {
      dist3 = dist_n(run.finals, 3);
    } catch (const DomainError&) {
    }
    std::optional<double> binned_r;
    if (flucts.size() == ppls.size() && flucts.size() >= 2 * cfg.analyze.bins) {
      try {
        binned_r = binned_correlation(flucts, ppls, cfg.analyze.bins);
      } catch (const DomainError&) {
      }
    }
    const auto to_j = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
    ordered_json s;
    s["mean_fluctuation"] = to_j(mean_of(flucts));
    s["mean_key_change"] = to_j(mean_of(keys));
    s["dist3"] = to_j(dist3);
    s["ppl"] = to_j(mean_of(ppls));
    s["binned_r"] = to_j(binned_r);
    s["samples"] = run.traces.size();
    summary[name] = s;
    comparison += name + "," + fmt_opt(mean_of(flucts)) + "," + fmt_opt(mean_of(keys)) + "," +
                  fmt_opt(mean_of(ppls)) + "," + fmt_opt(dist3) + "\n";
    log << name << ": " << run.traces.size() << " traces\n";
  }
  ordered_json doc;
  doc["config_hash"] = cfg.hash();
  doc["runs"] = summary;
  write_text(out / "summary.json", doc.dump(2) + "\n");
  write_text(out / "comparison.csv", comparison);
  write_meta(out / "comparison.csv", cfg, "analyze");
  rec.artifacts.push_back({"summary.json", "summary"});
  rec.artifacts.push_back({"comparison.csv", "comparison"});
  rec.wall_clock_s = seconds_since(start);
  record_stage(cfg, rec);
  return rec;
}

// ---- duality --------------------------------------------------------------------

StageRecord cmd_duality(const RunConfig& cfg, std::ostream& log) {
  const auto start = Clock::now();
  StageRecord rec;
  rec.stage = "duality";
  const fs::path out = out_dir(cfg);
  fs::create_directories(out);
  const auto& d = cfg.duality;
  std::string csv = "alpha_bar,alpha_tilde,alpha_disc,std_error\n";
  for (std::size_t i = 0; i < d.grid; ++i) {
    const double ab = static_cast<double>(i) / static_cast<double>(d.grid - 1);
    const DualityPoint p = duality_schedule(ab, d.vocab, d.draws, Rng::derive(d.seed, i));
    csv += fmt(p.alpha_bar) + "," + fmt(p.alpha_tilde) + "," + fmt(p.alpha_disc) + "," + fmt(p.std_error) + "\n";
  }
  write_text(out / "duality.csv", csv);
  write_meta(out / "duality.csv", cfg, "duality");
  log << "wrote " << d.grid << " grid points\n";
  rec.artifacts.push_back({"duality.csv", "duality"});
  rec.seeds.emplace_back("duality", d.seed);
  rec.wall_clock_s = seconds_since(start);
  record_stage(cfg, rec);
  return rec;
}

// ---- entry point ----------------------------------------------------------------

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simplex diffusion text generation with per-token timestep plans"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_override;
  std::uint64_t seed_override = 0;
  const std::vector<std::string> names{"train", "reduce", "generate", "analyze", "duality"};
  const std::map<std::string, std::string> help{{"train", "train the denoiser and classifiers"},
                                                {"reduce", "progressively reduce the step count"},
                                                {"generate", "sample sequences and traces"},
                                                {"analyze", "compute trace metrics"},
                                                {"duality", "tabulate the continuous/discrete schedule map"}};
  std::map<std::string, CLI::App*> subs;
  std::map<std::string, CLI::Option*> seed_opts;
  for (const auto& n : names) {
    CLI::App* sub = app.add_subcommand(n, help.at(n));
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_override, "output directory (overrides output_dir)");
    seed_opts[n] = sub->add_option("--seed", seed_override, "master seed (overrides seed)");
    subs[n] = sub;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }
  std::string cmd;
  for (const auto& n : names)
    if (subs[n]->parsed()) cmd = n;

  try {
    RunConfig cfg = RunConfig::load(config_path);
    if (!out_override.empty()) cfg.output_dir = out_override;
    if (seed_opts[cmd]->count() > 0) cfg.seed = seed_override;
    cfg.validate();
    StageRecord rec;
    if (cmd == "train") rec = cmd_train(cfg, out);
    if (cmd == "reduce") rec = cmd_reduce(cfg, out);
    if (cmd == "generate") rec = cmd_generate(cfg, out);
    if (cmd == "analyze") rec = cmd_analyze(cfg, out);
    if (cmd == "duality") rec = cmd_duality(cfg, out);
    out << cmd << " done in " << rec.wall_clock_s << " s; manifest " << (fs::path(cfg.output_dir) / "manifest.json").string()
        << "\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace tta::cli
