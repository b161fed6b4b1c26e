#include "tta_cli/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "tta/error.hpp"

namespace tta::cli {

using nlohmann::json;

namespace {

// Reads one JSON object, tracking which keys were consumed so leftovers can
// be reported with their full path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("expected an object", path_.empty() ? "<root>" : path_);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("expected a boolean", field(key));
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("expected an integer", field(key));
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) {
          out = static_cast<T>(v.get<std::uint64_t>());
        } else {
          throw ConfigError("expected a non-negative integer", field(key));
        }
      } else {
        out = static_cast<T>(v.get<std::int64_t>());
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("expected a number", field(key));
      out = v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("expected a string", field(key));
      out = v.get<std::string>();
    } else {
      try {
        out = v.get<T>();
      } catch (const json::exception&) {
        throw ConfigError("wrong type", field(key));
      }
    }
  }

  Reader sub(const std::string& key) {
    seen_.insert(key);
    static const json kEmpty = json::object();
    return Reader(j_.contains(key) ? j_.at(key) : kEmpty, field(key));
  }

  void skip(const std::string& key) { seen_.insert(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key", field(k));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename T>
void int_list(Reader& r, const std::string& key, std::vector<T>& out) {
  if (!r.has(key)) {
    r.get(key, out);
    return;
  }
  const json& v = r.raw(key);
  if (!v.is_array()) throw ConfigError("expected an array", r.field(key));
  out.clear();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if constexpr (std::is_integral_v<T>) {
      if (!v[i].is_number_integer()) throw ConfigError("expected integers", r.field(key) + "[" + std::to_string(i) + "]");
      out.push_back(v[i].get<T>());
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v[i].is_number()) throw ConfigError("expected numbers", r.field(key) + "[" + std::to_string(i) + "]");
      out.push_back(v[i].get<T>());
    } else {
      if (!v[i].is_string()) throw ConfigError("expected strings", r.field(key) + "[" + std::to_string(i) + "]");
      out.push_back(v[i].get<T>());
    }
  }
}

void require(bool ok, const std::string& message, const std::string& field) {
  if (!ok) throw ConfigError(message, field);
}

}  // namespace

void RunConfig::validate() const {
  require(schema_version == kConfigSchema, "unsupported schema version", "schema_version");
  try {
    corpus.spec.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), "corpus.spec");
  }
  require(corpus.split_ratio > 0.0 && corpus.split_ratio < 1.0, "must lie in (0, 1)", "corpus.split_ratio");

  require(schedule.T >= 1, "must be >= 1", "schedule.T");
  require(schedule.K > 0.0 && std::isfinite(schedule.K), "must be positive", "schedule.K");
  require(schedule.s >= 0.0 && std::isfinite(schedule.s), "must be >= 0", "schedule.s");

  require(model.d_model >= 1, "must be >= 1", "model.d_model");
  require(model.heads >= 1 && model.d_model % model.heads == 0, "must divide model.d_model", "model.heads");
  require(model.ff >= 1, "must be >= 1", "model.ff");
  require(model.blocks >= 1, "must be >= 1", "model.blocks");
  require(model.classifier_d_model >= 1, "must be >= 1", "model.classifier_d_model");
  require(model.eval_classifier_d_model >= 1, "must be >= 1", "model.eval_classifier_d_model");
  require(model.classifier_temperature > 0.0, "must be positive", "model.classifier_temperature");

  require(train.batch_size >= 1, "must be >= 1", "train.batch_size");
  require(train.lr > 0.0, "must be positive", "train.lr");
  require(train.max_prefix < corpus.spec.seq_len, "must be shorter than the sequence", "train.max_prefix");
  require(train.mixed_plan_prob >= 0.0 && train.mixed_plan_prob <= 1.0, "must lie in [0, 1]", "train.mixed_plan_prob");
  require(train.classifier_batch_size >= 1, "must be >= 1", "train.classifier_batch_size");

  require(!reduce.ladder.empty(), "must list at least one ratio", "reduce.ladder");
  for (std::size_t i = 0; i < reduce.ladder.size(); ++i) {
    const std::string f = "reduce.ladder[" + std::to_string(i) + "]";
    require(reduce.ladder[i] > 0.0 && reduce.ladder[i] <= 1.0, "ratios must lie in (0, 1]", f);
    if (i > 0) require(reduce.ladder[i] < reduce.ladder[i - 1], "ladder must be strictly decreasing", f);
  }
  require(reduce.batch_size >= 1, "must be >= 1", "reduce.batch_size");
  require(reduce.sampled_steps >= 1, "must be >= 1", "reduce.sampled_steps");
  require(reduce.prefix < corpus.spec.seq_len, "must be shorter than the sequence", "reduce.prefix");
  require(reduce.top_p > 0.0 && reduce.top_p <= 1.0, "must lie in (0, 1]", "reduce.top_p");
  require(reduce.lr > 0.0, "must be positive", "reduce.lr");
  require(reduce.eval_examples >= 1, "must be >= 1", "reduce.eval_examples");

  const auto& g = generation;
  require(g.samples >= 1, "must be >= 1", "generation.samples");
  require(g.steps >= 1 && g.steps <= static_cast<std::size_t>(schedule.T), "must lie in [1, schedule.T]", "generation.steps");
  try {
    g.policy.validate();
  } catch (const ConfigError&) {
    throw ConfigError("must lie in [0, 1]", "generation.policy.alpha_smooth");
  }
  require(g.lambda >= 0.0 && std::isfinite(g.lambda), "must be finite and >= 0", "generation.lambda");
  bool known = false;
  for (const auto& l : corpus.spec.labels) known = known || l == g.target_label;
  require(known, "not one of corpus.spec.labels", "generation.target_label");
  require(g.iterations >= 0, "must be >= 0", "generation.iterations");
  require(g.window >= 0.0 && g.window <= 1.0, "must lie in [0, 1]", "generation.window");
  require(g.top_p > 0.0 && g.top_p <= 1.0, "must lie in (0, 1]", "generation.top_p");
  require(g.key_k >= 1 && g.key_k <= corpus.spec.seq_len, "must lie in [1, N]", "generation.key_k");
  require(g.prompt.size() < corpus.spec.seq_len, "must be shorter than the sequence", "generation.prompt");
  for (int id : g.prompt) require(id >= 0 && static_cast<std::size_t>(id) < corpus.spec.vocab, "token out of range", "generation.prompt");
  if (g.constraint) {
    require(g.constraint->eos_position >= 0 && static_cast<std::size_t>(g.constraint->eos_position) < corpus.spec.seq_len,
            "must lie in [0, N)", "generation.constraint.eos_position");
    require(g.constraint->eos_token >= 0 && static_cast<std::size_t>(g.constraint->eos_token) < corpus.spec.vocab,
            "must lie in [0, V)", "generation.constraint.eos_token");
  }
  if (g.policy.kind == PolicyKind::adaptive && g.classifier.empty()) {
    throw ConfigError("generation.policy.kind 'adaptive' requires a classifier checkpoint", "generation.classifier");
  }

  require(analyze.k >= 1, "must be >= 1", "analyze.k");
  require(analyze.bins >= 2, "must be >= 2", "analyze.bins");
  require(duality.vocab >= 2, "must be >= 2", "duality.vocab");
  require(duality.grid >= 2, "must be >= 2", "duality.grid");
  require(duality.draws >= 1, "must be >= 1", "duality.draws");
  require(!output_dir.empty(), "must not be empty", "output_dir");
}

std::string RunConfig::to_json() const {
  json j;
  j["schema_version"] = schema_version;
  j["corpus"] = {{"path", corpus.path},
                 {"spec", json::parse(corpus.spec.to_json())},
                 {"split_ratio", corpus.split_ratio},
                 {"split_seed", corpus.split_seed}};
  j["schedule"] = {{"T", schedule.T}, {"s", schedule.s}, {"K", schedule.K}};
  j["model"] = {{"d_model", model.d_model},
                {"heads", model.heads},
                {"ff", model.ff},
                {"blocks", model.blocks},
                {"positional", model.positional},
                {"classifier_d_model", model.classifier_d_model},
                {"classifier_temperature", model.classifier_temperature},
                {"eval_classifier_d_model", model.eval_classifier_d_model}};
  j["train"] = {{"steps", train.steps},
                {"batch_size", train.batch_size},
                {"lr", train.lr},
                {"clip_norm", train.clip_norm},
                {"max_prefix", train.max_prefix},
                {"mixed_plan_prob", train.mixed_plan_prob},
                {"classifier_steps", train.classifier_steps},
                {"classifier_batch_size", train.classifier_batch_size}};
  j["reduce"] = {{"teacher", reduce.teacher},
                 {"ladder", reduce.ladder},
                 {"steps", reduce.steps},
                 {"batch_size", reduce.batch_size},
                 {"sampled_steps", reduce.sampled_steps},
                 {"prefix", reduce.prefix},
                 {"top_p", reduce.top_p},
                 {"lr", reduce.lr},
                 {"eval_examples", reduce.eval_examples}};
  json policy = json::parse(generation.policy.to_json());
  json gen = {{"denoiser", generation.denoiser},
              {"classifier", generation.classifier},
              {"samples", generation.samples},
              {"steps", generation.steps},
              {"policy", policy},
              {"lambda", generation.lambda},
              {"target_label", generation.target_label},
              {"iterations", generation.iterations},
              {"window", generation.window},
              {"top_p", generation.top_p},
              {"key_k", generation.key_k},
              {"prompt", generation.prompt}};
  if (generation.constraint) {
    gen["constraint"] = {{"kind", "length"},
                         {"eos_position", generation.constraint->eos_position},
                         {"eos_token", generation.constraint->eos_token}};
  } else {
    gen["constraint"] = nullptr;
  }
  j["generation"] = gen;
  j["analyze"] = {{"runs", analyze.runs}, {"k", analyze.k}, {"bins", analyze.bins}};
  j["duality"] = {{"vocab", duality.vocab}, {"grid", duality.grid}, {"draws", duality.draws}, {"seed", duality.seed}};
  j["output_dir"] = output_dir;
  j["seed"] = seed;
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("not valid JSON: ") + e.what(), "<root>");
  }
  RunConfig c;
  Reader root(j, "");
  root.get("schema_version", c.schema_version);
  if (!root.has("schema_version")) throw ConfigError("missing", "schema_version");
  if (c.schema_version != kConfigSchema) throw ConfigError("unsupported schema version", "schema_version");

  {
    Reader r = root.sub("corpus");
    r.get("path", c.corpus.path);
    Reader s = r.sub("spec");
    auto& sp = c.corpus.spec;
    s.get("vocab", sp.vocab);
    s.get("seq_len", sp.seq_len);
    int_list(s, "labels", sp.labels);
    s.get("size", sp.size);
    s.get("seed", sp.seed);
    s.get("branching", sp.branching);
    s.get("backbone_floor", sp.backbone_floor);
    s.get("attribute_tokens", sp.attribute_tokens);
    s.get("tilt", sp.tilt);
    s.finish();
    r.get("split_ratio", c.corpus.split_ratio);
    r.get("split_seed", c.corpus.split_seed);
    r.finish();
  }
  {
    Reader r = root.sub("schedule");
    r.get("T", c.schedule.T);
    r.get("s", c.schedule.s);
    r.get("K", c.schedule.K);
    r.finish();
  }
  {
    Reader r = root.sub("model");
    r.get("d_model", c.model.d_model);
    r.get("heads", c.model.heads);
    r.get("ff", c.model.ff);
    r.get("blocks", c.model.blocks);
    r.get("positional", c.model.positional);
    r.get("classifier_d_model", c.model.classifier_d_model);
    r.get("classifier_temperature", c.model.classifier_temperature);
    r.get("eval_classifier_d_model", c.model.eval_classifier_d_model);
    r.finish();
  }
  {
    Reader r = root.sub("train");
    r.get("steps", c.train.steps);
    r.get("batch_size", c.train.batch_size);
    r.get("lr", c.train.lr);
    r.get("clip_norm", c.train.clip_norm);
    r.get("max_prefix", c.train.max_prefix);
    r.get("mixed_plan_prob", c.train.mixed_plan_prob);
    r.get("classifier_steps", c.train.classifier_steps);
    r.get("classifier_batch_size", c.train.classifier_batch_size);
    r.finish();
  }
  {
    Reader r = root.sub("reduce");
    r.get("teacher", c.reduce.teacher);
    int_list(r, "ladder", c.reduce.ladder);
    r.get("steps", c.reduce.steps);
    r.get("batch_size", c.reduce.batch_size);
    r.get("sampled_steps", c.reduce.sampled_steps);
    r.get("prefix", c.reduce.prefix);
    r.get("top_p", c.reduce.top_p);
    r.get("lr", c.reduce.lr);
    r.get("eval_examples", c.reduce.eval_examples);
    r.finish();
  }
  {
    Reader r = root.sub("generation");
    auto& g = c.generation;
    r.get("denoiser", g.denoiser);
    r.get("classifier", g.classifier);
    r.get("samples", g.samples);
    r.get("steps", g.steps);
    {
      Reader p = r.sub("policy");
      std::string kind = to_string(g.policy.kind);
      p.get("kind", kind);
      try {
        g.policy.kind = parse_policy_kind(kind);
      } catch (const ConfigError&) {
        throw ConfigError("unknown policy '" + kind + "'", p.field("kind"));
      }
      p.get("alpha_smooth", g.policy.alpha_smooth);
      p.get("seed", g.policy.seed);
      p.finish();
    }
    r.get("lambda", g.lambda);
    r.get("target_label", g.target_label);
    r.get("iterations", g.iterations);
    r.get("window", g.window);
    r.get("top_p", g.top_p);
    r.get("key_k", g.key_k);
    int_list(r, "prompt", g.prompt);
    if (r.has("constraint") && !r.raw("constraint").is_null()) {
      Reader k = r.sub("constraint");
      std::string kind = "length";
      k.get("kind", kind);
      if (kind != "length") throw ConfigError("only 'length' constraints are supported", k.field("kind"));
      ConstraintSection cs;
      k.get("eos_position", cs.eos_position);
      k.get("eos_token", cs.eos_token);
      k.finish();
      g.constraint = cs;
    } else {
      r.skip("constraint");
    }
    r.finish();
  }
  {
    Reader r = root.sub("analyze");
    int_list(r, "runs", c.analyze.runs);
    r.get("k", c.analyze.k);
    r.get("bins", c.analyze.bins);
    r.finish();
  }
  {
    Reader r = root.sub("duality");
    r.get("vocab", c.duality.vocab);
    r.get("grid", c.duality.grid);
    r.get("draws", c.duality.draws);
    r.get("seed", c.duality.seed);
    r.finish();
  }
  root.get("output_dir", c.output_dir);
  root.get("seed", c.seed);
  root.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'", "--config");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string RunConfig::hash() const {
  const std::string canon = json::parse(to_json()).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace tta::cli
