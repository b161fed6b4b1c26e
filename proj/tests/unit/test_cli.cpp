#include <doctest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tta/error.hpp"
#include "tta/guidance.hpp"
#include "tta/models.hpp"
#include "tta_cli/commands.hpp"
#include "tta_cli/config.hpp"

using namespace tta;
using namespace tta::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_root() { return fs::temp_directory_path() / ("tta_cli_test_" + std::to_string(::getpid())); }

struct RootCleanup {
  ~RootCleanup() {
    std::error_code ec;
    fs::remove_all(scratch_root(), ec);
  }
} cleanup;

fs::path scratch(const std::string& name) {
  const fs::path p = scratch_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "tta");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

/// Small but complete pipeline config rooted at `dir`.
json tiny_config(const fs::path& dir) {
  json j;
  j["schema_version"] = 1;
  j["corpus"] = {{"spec", {{"size", 200}}}};
  j["schedule"] = {{"T", 8}};
  j["model"] = {{"d_model", 8}, {"ff", 16}, {"blocks", 1}, {"classifier_d_model", 8}, {"eval_classifier_d_model", 8}};
  j["train"] = {{"steps", 20}, {"classifier_steps", 20}};
  j["reduce"] = {{"steps", 2}, {"ladder", {0.5}}, {"eval_examples", 4}};
  j["generation"] = {{"samples", 3},
                     {"denoiser", (dir / "denoiser.ckpt").string()},
                     {"steps", 8},
                     {"classifier", (dir / "classifier.ckpt").string()},
                     {"policy", {{"kind", "adaptive"}}}};
  j["output_dir"] = dir.string();
  return j;
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json") {
  const fs::path p = dir / name;
  spit(p, j.dump(2));
  return p;
}

}  // namespace

TEST_CASE("config round trip and hash") {
  RunConfig c;
  c.schedule.T = 32;
  c.reduce.ladder = {0.75, 0.5, 0.125};
  c.generation.policy.kind = PolicyKind::random;
  c.generation.policy.seed = 17;
  c.generation.lambda = 123.5;
  c.generation.constraint = ConstraintSection{7, 3};
  c.generation.prompt = {1, 2};
  c.generation.steps = 16;
  c.analyze.runs = {"a", "b"};
  c.seed = 99;
  const RunConfig back = RunConfig::from_json(c.to_json());
  CHECK(back == c);
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  CHECK(c.hash().size() == 16);
  RunConfig d = c;
  d.seed = 100;
  CHECK(d.hash() != c.hash());
  // defaults fill in missing keys
  CHECK(RunConfig::from_json(R"({"schema_version": 1})") == RunConfig{});
}

TEST_CASE("config validation names the field") {
  const auto field_of = [](const std::string& text) {
    try {
      RunConfig::from_json(text);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("<accepted>");
  };
  CHECK(field_of(R"({"schema_version": 1, "generation": {"lambda": -1}})") == "generation.lambda");
  CHECK(field_of(R"({"schema_version": 1, "reduce": {"ladder": [0.25, 0.5]}})") == "reduce.ladder[1]");
  CHECK(field_of(R"({"schema_version": 1, "reduce": {"ladder": [0.5, 0.5]}})") == "reduce.ladder[1]");
  CHECK(field_of(R"({"schema_version": 1, "reduce": {"ladder": [1.5]}})") == "reduce.ladder[0]");
  CHECK(field_of(R"({"schema_version": 1, "reduce": {"ladder": [0]}})") == "reduce.ladder[0]");
  CHECK(field_of(R"({"schema_version": 1, "schedule": {"T": 0}})") == "schedule.T");
  CHECK(field_of(R"({"schema_version": 1, "schedule": {"K": "five"}})") == "schedule.K");
  CHECK(field_of(R"({"schema_version": 1, "train": {"steps": -3}})") == "train.steps");
  CHECK(field_of(R"({"schema_version": 1, "model": {"bogus": 1}})") == "model.bogus");
  CHECK(field_of(R"({"schema_version": 2})") == "schema_version");
  CHECK(field_of(R"({})") == "schema_version");
  CHECK(field_of(R"({"schema_version": 1, "generation": {"policy": {"kind": "zigzag"}}})") == "generation.policy.kind");
  CHECK(field_of(R"({"schema_version": 1, "generation": {"target_label": "neutral"}})") == "generation.target_label");
  CHECK(field_of(R"({"schema_version": 1, "generation": {"steps": 65}})") == "generation.steps");
  CHECK(field_of(R"({"schema_version": 1, "generation": {"constraint": {"eos_position": 16, "eos_token": 0}}})") ==
        "generation.constraint.eos_position");
  CHECK(field_of(R"({"schema_version": 1, "corpus": {"spec": {"tilt": -1}}})") == "corpus.spec");

  // adaptive without a classifier: the message names both fields
  try {
    RunConfig::from_json(R"({"schema_version": 1, "generation": {"policy": {"kind": "adaptive"}}})");
    FAIL("accepted adaptive without classifier");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("generation.classifier") != std::string::npos);
    CHECK(msg.find("generation.policy.kind") != std::string::npos);
  }
}

TEST_CASE("exit codes") {
  const fs::path dir = scratch("exit");
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate", "--config", "x"}).code == kExitUsage);
  CHECK(run({"train"}).code == kExitUsage);
  CHECK(run({"train", "--config", (dir / "missing.json").string()}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);

  json j = tiny_config(dir);
  j["corpus"]["path"] = (dir / "no_such_corpus.jsonl").string();
  const auto r = run({"train", "--config", write_config(dir, j).string()});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("corpus.path") != std::string::npos);

  // analyze over an empty run directory
  fs::create_directories(dir / "empty");
  json a = tiny_config(dir);
  a["analyze"] = {{"runs", {(dir / "empty").string()}}};
  CHECK(run({"analyze", "--config", write_config(dir, a, "a.json").string(), "--out", (dir / "ana").string()}).code ==
        kExitUsage);
  fs::create_directories(dir / "empty2" / "traces");
  a["analyze"] = {{"runs", {(dir / "empty2").string()}}};
  CHECK(run({"analyze", "--config", write_config(dir, a, "a.json").string(), "--out", (dir / "ana").string()}).code ==
        kExitUsage);

  // corrupt trace: runtime failure naming the record
  fs::create_directories(dir / "bad" / "traces");
  spit(dir / "bad" / "traces" / "sample_00000.jsonl", "{\"step\":0}\n");
  a["analyze"] = {{"runs", {(dir / "bad").string()}}};
  const auto bad = run({"analyze", "--config", write_config(dir, a, "a.json").string(), "--out", (dir / "ana").string()});
  CHECK(bad.code == kExitRuntime);
  CHECK(bad.err.find("record 0") != std::string::npos);

  // generate without a checkpoint
  json g = tiny_config(dir / "nothing");
  CHECK(run({"generate", "--config", write_config(dir, g, "g.json").string()}).code == kExitUsage);
}

TEST_CASE("pipeline: deterministic train, chained reduce, deterministic generate") {
  const fs::path a = scratch("run_a");
  const fs::path b = scratch("run_b");
  const auto cfg_a = write_config(a, tiny_config(a));
  const auto cfg_b = write_config(b, tiny_config(b));

  REQUIRE(run({"train", "--config", cfg_a.string()}).code == kExitOk);
  REQUIRE(run({"train", "--config", cfg_b.string()}).code == kExitOk);
  for (const char* f : {"denoiser.ckpt", "classifier.ckpt", "eval_classifier.ckpt", "corpus.jsonl"}) {
    CAPTURE(f);
    CHECK(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  // a different seed changes the weights
  const fs::path c = scratch("run_c");
  REQUIRE(run({"train", "--config", write_config(c, tiny_config(c)).string(), "--seed", "5"}).code == kExitOk);
  CHECK(slurp(a / "denoiser.ckpt") != slurp(c / "denoiser.ckpt"));

  // every listed artifact exists and carries the config hash
  const json manifest = json::parse(slurp(a / "manifest.json"));
  const auto& train = manifest.at("stages").at("train");
  const std::string hash = train.at("config_hash");
  CHECK(RunConfig::from_json(train.at("config").dump()).hash() == hash);
  CHECK(train.at("wall_clock_s").get<double>() >= 0.0);
  CHECK(train.at("seeds").size() >= 3);
  CHECK(manifest.at("code_version").get<std::string>() == code_version());
  for (const auto& art : train.at("artifacts")) {
    const fs::path p = a / art.at("path").get<std::string>();
    CHECK(fs::exists(p));
    CHECK(json::parse(slurp(p.string() + ".meta.json")).at("config_hash") == hash);
  }

  // reduce with one ratio on T=8 gives one student at T=4
  REQUIRE(run({"reduce", "--config", cfg_a.string()}).code == kExitOk);
  CHECK(load_denoiser((a / "student_T4.ckpt").string()).config.T == 4);
  CHECK(!fs::exists(a / "student_T2.ckpt"));
  // a two-ratio ladder chains T=4 then T=2
  json two = tiny_config(a);
  two["reduce"]["ladder"] = {0.5, 0.25};
  REQUIRE(run({"reduce", "--config", write_config(a, two, "two.json").string()}).code == kExitOk);
  CHECK(load_denoiser((a / "student_T2.ckpt").string()).config.T == 2);
  const json meta = json::parse(slurp(a / "student_T2.ckpt.meta.json"));
  CHECK(meta.at("details").at("initialized_from") == "student_T4.ckpt");
  const json report = json::parse(slurp(a / "reduce_report.json"));
  CHECK(report.at("students").size() == 2);
  // a non-decreasing ladder is rejected before any work
  two["reduce"]["ladder"] = {0.25, 0.5};
  const auto rej = run({"reduce", "--config", write_config(a, two, "bad.json").string()});
  CHECK(rej.code == kExitUsage);
  CHECK(rej.err.find("reduce.ladder") != std::string::npos);

  // generate twice into separate directories: byte-identical outputs
  const auto g1 = run({"generate", "--config", cfg_a.string(), "--out", (a / "gen1").string()});
  INFO(g1.err);
  REQUIRE(g1.code == kExitOk);
  REQUIRE(run({"generate", "--config", cfg_a.string(), "--out", (a / "gen2").string()}).code == kExitOk);
  // the output directory is part of the config, so strip it before comparing samples
  const auto strip_hash = [](std::string s) {
    std::string out;
    std::istringstream is(s);
    std::string line;
    while (std::getline(is, line)) {
      auto j = json::parse(line);
      j.erase("config_hash");
      out += j.dump() + "\n";
    }
    return out;
  };
  CHECK(strip_hash(slurp(a / "gen1" / "samples.jsonl")) == strip_hash(slurp(a / "gen2" / "samples.jsonl")));
  for (int i = 0; i < 3; ++i) {
    const std::string name = "sample_0000" + std::to_string(i) + ".jsonl";
    CHECK(slurp(a / "gen1" / "traces" / name) == slurp(a / "gen2" / "traces" / name));
  }
  // and byte-identical when the whole config matches
  REQUIRE(run({"generate", "--config", cfg_a.string(), "--out", (a / "gen1").string()}).code == kExitOk);
  const std::string first = slurp(a / "gen1" / "samples.jsonl");
  REQUIRE(run({"generate", "--config", cfg_a.string(), "--out", (a / "gen1").string()}).code == kExitOk);
  CHECK(slurp(a / "gen1" / "samples.jsonl") == first);
  std::ifstream trace_in(a / "gen1" / "traces" / "sample_00000.jsonl");
  const auto trace = GenerationTrace::read_jsonl(trace_in);
  CHECK(trace.steps.size() == 8);

  // analyze the two generation runs
  json an = tiny_config(a);
  an["analyze"] = {{"runs", {(a / "gen1").string(), (a / "gen2").string()}}, {"bins", 2}};
  const auto ar = run({"analyze", "--config", write_config(a, an, "an.json").string(), "--out", (a / "ana").string()});
  INFO(ar.err);
  REQUIRE(ar.code == kExitOk);
  const json summary = json::parse(slurp(a / "ana" / "summary.json"));
  for (const char* key : {"mean_fluctuation", "mean_key_change", "dist3", "ppl", "binned_r"}) {
    CHECK(summary.at("runs").at("gen1").contains(key));
  }
  CHECK(summary.at("runs").at("gen1") == summary.at("runs").at("gen2"));
  const std::string table = slurp(a / "ana" / "comparison.csv");
  CHECK(table.rfind("run,fluctuation_ratio,key_token_change_ratio,ppl,dist3\n", 0) == 0);
}

TEST_CASE("analyze: hand-built trace gives the exact step CSV") {
  const fs::path dir = scratch("hand");
  fs::create_directories(dir / "run" / "traces");
  GenerationTrace t;
  StepRecord r0;
  r0.step = 0;
  r0.t_global = 3;
  r0.plan = TimestepPlan::constant(4, 3);
  r0.tokens = {1, 2, 3, 4};
  r0.grad_norms = {0.5, 0.4, 0.1, 0.1};
  r0.key_tokens = {0, 1};
  r0.conf_after_guidance = 0.75;
  r0.conf_before_next = 0.5;
  StepRecord r1 = r0;
  r1.step = 1;
  r1.t_global = 2;
  r1.plan = TimestepPlan::constant(4, 2);
  r1.tokens = {1, 5, 3, 6};
  r1.key_tokens = {1, 3};
  r1.conf_after_guidance = 0.875;
  r1.conf_before_next = 0.625;
  StepRecord r2;
  r2.step = 2;
  r2.t_global = 1;
  r2.plan = TimestepPlan::constant(4, 1);
  r2.tokens = {1, 5, 3, 6};
  t.steps = {r0, r1, r2};
  spit(dir / "run" / "traces" / "sample_00000.jsonl", t.to_jsonl());

  json j;
  j["schema_version"] = 1;
  j["corpus"] = {{"spec", {{"vocab", 8}, {"seq_len", 4}, {"size", 50}, {"attribute_tokens", 2}}}};
  j["train"] = {{"max_prefix", 0}};
  j["reduce"] = {{"prefix", 0}};
  j["generation"] = {{"key_k", 2}};
  j["analyze"] = {{"runs", {(dir / "run").string()}}, {"k", 2}, {"bins", 2}};
  REQUIRE(run({"analyze", "--config", write_config(dir, j).string(), "--out", (dir / "out").string()}).code == kExitOk);
  // R: none, 2 of 4 changed, none changed. Running mean: 0.5, 0.25.
  // Key tokens of record 0 (positions 0, 1): position 1 changes. Record 1 keys (1, 3): unchanged.
  CHECK(slurp(dir / "out" / "run" / "steps.csv") ==
        "step,R_t,mean_R,key_change_ratio,conf_after,conf_before_next,drop\n"
        "0,,,0.5,0.75,0.5,0.25\n"
        "1,0.5,0.5,0,0.875,0.625,0.25\n"
        "2,0,0.25,,,,\n");
  const json s = json::parse(slurp(dir / "out" / "summary.json")).at("runs").at("run");
  CHECK(s.at("mean_fluctuation").get<double>() == 0.25);
  CHECK(s.at("mean_key_change").get<double>() == 0.25);
}

TEST_CASE("duality command") {
  const fs::path dir = scratch("dual");
  json j;
  j["schema_version"] = 1;
  j["duality"] = {{"vocab", 2}, {"grid", 3}, {"draws", 20000}};
  REQUIRE(run({"duality", "--config", write_config(dir, j).string(), "--out", dir.string()}).code == kExitOk);
  std::istringstream csv(slurp(dir / "duality.csv"));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "alpha_bar,alpha_tilde,alpha_disc,std_error");
  CHECK(lines[1] == "0,0,0,0");
  CHECK(lines[3] == "1,1,1,0");
  // middle row: V=2 closed form Phi(a / sqrt(2 (1 - a^2))) with a = alpha_tilde, mapped to (2P - 1)
  double ab, at, ad, se;
  char c;
  std::istringstream mid(lines[2]);
  mid >> ab >> c >> at >> c >> ad >> c >> se;
  CHECK(ab == 0.5);
  const double k = at / std::sqrt(2.0 * (1.0 - at * at));
  const double p = 0.5 * std::erfc(-k / std::sqrt(2.0));
  CHECK(std::abs(ad - (2.0 * p - 1.0)) < 3.0 * se);
}
