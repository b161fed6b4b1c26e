#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "tta/error.hpp"
#include "tta/models.hpp"

namespace tta {

namespace {

constexpr char kMagic[8] = {'T', 'T', 'A', 'C', 'K', 'P', 'T', '\0'};

void write_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw ConfigError("truncated checkpoint", "checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_store(std::ostream& os, nlohmann::ordered_json header, const ParamStore& store) {
  header["params"] = nlohmann::ordered_json::array();
  for (const auto& e : store.entries()) {
    nlohmann::ordered_json p;
    p["name"] = e.name;
    p["shape"] = e.value.shape();
    header["params"].push_back(p);
  }
  const std::string text = header.dump();
  os.write(kMagic, sizeof kMagic);
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : store.entries())
    for (double v : e.value.data()) write_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw Error("failed writing checkpoint");
}

nlohmann::json read_header(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw ConfigError("not a checkpoint file", "checkpoint");
  const std::uint64_t len = read_u64(is);
  if (len > (1u << 26)) throw ConfigError("implausible checkpoint header length", "checkpoint");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw ConfigError("truncated checkpoint header", "checkpoint");
  auto header = nlohmann::json::parse(text);
  if (header.at("schema_version").get<int>() != kCheckpointSchema) {
    throw ConfigError("unsupported checkpoint schema version", "checkpoint.schema_version");
  }
  return header;
}

ParamStore read_store(std::istream& is, const nlohmann::json& header) {
  ParamStore store;
  for (const auto& p : header.at("params")) {
    ad::Tensor t(p.at("shape").get<ad::Shape>(), 0.0);
    for (double& v : t.data()) v = std::bit_cast<double>(read_u64(is));
    store.add(p.at("name").get<std::string>(), std::move(t));
  }
  return store;
}

nlohmann::ordered_json denoiser_config_json(const DenoiserConfig& c) {
  nlohmann::ordered_json j;
  j["vocab"] = c.vocab;
  j["d_model"] = c.d_model;
  j["heads"] = c.heads;
  j["ff"] = c.ff;
  j["blocks"] = c.blocks;
  j["max_len"] = c.max_len;
  j["T"] = c.T;
  j["positional"] = c.positional;
  return j;
}

nlohmann::ordered_json classifier_config_json(const ClassifierConfig& c) {
  nlohmann::ordered_json j;
  j["vocab"] = c.vocab;
  j["d_model"] = c.d_model;
  j["labels"] = c.labels;
  j["temperature"] = c.temperature;
  return j;
}

}  // namespace

void save_checkpoint(std::ostream& os, const DenoiserParams& params) {
  nlohmann::ordered_json h;
  h["schema_version"] = kCheckpointSchema;
  h["kind"] = "denoiser";
  h["config"] = denoiser_config_json(params.config);
  h["T"] = params.config.T;
  h["V"] = params.config.vocab;
  h["d"] = params.config.d_model;
  write_store(os, std::move(h), params.store);
}

void save_checkpoint(std::ostream& os, const ClassifierParams& params) {
  nlohmann::ordered_json h;
  h["schema_version"] = kCheckpointSchema;
  h["kind"] = "classifier";
  h["config"] = classifier_config_json(params.config);
  h["T"] = 0;
  h["V"] = params.config.vocab;
  h["d"] = params.config.d_model;
  write_store(os, std::move(h), params.store);
}

DenoiserParams load_denoiser(std::istream& is) {
  const auto h = read_header(is);
  if (h.at("kind").get<std::string>() != "denoiser") throw ConfigError("checkpoint is not a denoiser", "checkpoint.kind");
  const auto& c = h.at("config");
  DenoiserParams p;
  p.config.vocab = c.at("vocab");
  p.config.d_model = c.at("d_model");
  p.config.heads = c.at("heads");
  p.config.ff = c.at("ff");
  p.config.blocks = c.at("blocks");
  p.config.max_len = c.at("max_len");
  p.config.T = c.at("T");
  p.config.positional = c.at("positional");
  p.store = read_store(is, h);
  return p;
}

ClassifierParams load_classifier(std::istream& is) {
  const auto h = read_header(is);
  if (h.at("kind").get<std::string>() != "classifier") throw ConfigError("checkpoint is not a classifier", "checkpoint.kind");
  const auto& c = h.at("config");
  ClassifierParams p;
  p.config.vocab = c.at("vocab");
  p.config.d_model = c.at("d_model");
  p.config.labels = c.at("labels");
  p.config.temperature = c.at("temperature");
  p.store = read_store(is, h);
  return p;
}

void save_checkpoint(const std::string& path, const DenoiserParams& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open for writing", path);
  save_checkpoint(f, params);
}

void save_checkpoint(const std::string& path, const ClassifierParams& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open for writing", path);
  save_checkpoint(f, params);
}

DenoiserParams load_denoiser(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open checkpoint", path);
  return load_denoiser(f);
}

ClassifierParams load_classifier(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open checkpoint", path);
  return load_classifier(f);
}

std::string checkpoint_kind(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open checkpoint", path);
  return read_header(f).at("kind").get<std::string>();
}

}  // namespace tta
