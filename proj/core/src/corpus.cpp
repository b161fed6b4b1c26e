#include "tta/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "tta/error.hpp"
#include "tta/rng.hpp"

namespace tta {

namespace {

nlohmann::ordered_json spec_json(const CorpusSpec& s) {
  nlohmann::ordered_json j;
  j["vocab"] = s.vocab;
  j["seq_len"] = s.seq_len;
  j["labels"] = s.labels;
  j["size"] = s.size;
  j["seed"] = s.seed;
  j["branching"] = s.branching;
  j["backbone_floor"] = s.backbone_floor;
  j["attribute_tokens"] = s.attribute_tokens;
  j["tilt"] = s.tilt;
  return j;
}

CorpusSpec spec_from(const nlohmann::json& j) {
  CorpusSpec s;
  s.vocab = j.value("vocab", s.vocab);
  s.seq_len = j.value("seq_len", s.seq_len);
  s.labels = j.value("labels", s.labels);
  s.size = j.value("size", s.size);
  s.seed = j.value("seed", s.seed);
  s.branching = j.value("branching", s.branching);
  s.backbone_floor = j.value("backbone_floor", s.backbone_floor);
  s.attribute_tokens = j.value("attribute_tokens", s.attribute_tokens);
  s.tilt = j.value("tilt", s.tilt);
  s.validate();
  return s;
}

std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

}  // namespace

void CorpusSpec::validate() const {
  if (vocab < 8) throw ConfigError("vocabulary must hold at least 8 tokens", "corpus.vocab");
  if (seq_len < 1) throw ConfigError("sequence length must be >= 1", "corpus.seq_len");
  if (labels.size() < 2) throw ConfigError("at least two labels are required", "corpus.labels");
  if (branching < 1 || branching > vocab) throw ConfigError("branching must lie in [1, vocab]", "corpus.branching");
  if (!(backbone_floor > 0.0) || backbone_floor >= 1.0) {
    throw ConfigError("backbone floor must lie in (0, 1)", "corpus.backbone_floor");
  }
  if (attribute_tokens * labels.size() > vocab) {
    throw ConfigError("attribute sets do not fit in the vocabulary", "corpus.attribute_tokens");
  }
  if (!(tilt > 0.0) || !std::isfinite(tilt)) throw ConfigError("tilt must be positive and finite", "corpus.tilt");
}

std::string CorpusSpec::to_json() const { return spec_json(*this).dump(); }

CorpusSpec CorpusSpec::from_json(const std::string& text) { return spec_from(nlohmann::json::parse(text)); }

CorpusModel build_corpus_model(const CorpusSpec& spec) {
  spec.validate();
  const std::size_t V = spec.vocab;
  const std::size_t L = spec.labels.size();
  Rng rng(Rng::derive(spec.seed, 0xB16A));

  std::vector<double> backbone(V * V, 0.0);
  std::vector<int> perm(V);
  for (std::size_t a = 0; a < V; ++a) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    double total = 0.0;
    std::vector<double> w(spec.branching);
    for (double& x : w) {
      x = 0.5 + rng.uniform();
      total += x;
    }
    for (std::size_t k = 0; k < spec.branching; ++k) {
      backbone[a * V + static_cast<std::size_t>(perm[k])] += (1.0 - spec.backbone_floor) * w[k] / total;
    }
    for (std::size_t b = 0; b < V; ++b) backbone[a * V + b] += spec.backbone_floor / static_cast<double>(V);
  }

  CorpusModel model;
  model.vocab = V;
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<int> set(perm.begin() + static_cast<std::ptrdiff_t>(l * spec.attribute_tokens),
                         perm.begin() + static_cast<std::ptrdiff_t>((l + 1) * spec.attribute_tokens));
    std::sort(set.begin(), set.end());
    model.attribute_sets.push_back(std::move(set));
  }

  for (std::size_t l = 0; l < L; ++l) {
    std::vector<double> weight(V, 1.0);
    for (int tok : model.attribute_sets[l]) weight[static_cast<std::size_t>(tok)] = spec.tilt;
    std::vector<double> trans(V * V);
    for (std::size_t a = 0; a < V; ++a) {
      double z = 0.0;
      for (std::size_t b = 0; b < V; ++b) z += backbone[a * V + b] * weight[b];
      if (!(z > 0.0)) throw ConfigError("degenerate emission profile", "corpus");
      for (std::size_t b = 0; b < V; ++b) trans[a * V + b] = backbone[a * V + b] * weight[b] / z;
    }
    // stationary distribution by power iteration; the floor makes the chain ergodic
    std::vector<double> pi(V, 1.0 / static_cast<double>(V)), next(V);
    for (int it = 0; it < 10000; ++it) {
      std::fill(next.begin(), next.end(), 0.0);
      for (std::size_t a = 0; a < V; ++a)
        for (std::size_t b = 0; b < V; ++b) next[b] += pi[a] * trans[a * V + b];
      double diff = 0.0;
      for (std::size_t b = 0; b < V; ++b) diff += std::abs(next[b] - pi[b]);
      pi.swap(next);
      if (diff < 1e-15) break;
    }
    model.transitions.push_back(std::move(trans));
    model.profile.push_back(std::move(pi));
  }
  return model;
}

std::vector<LabeledExample> synthesize(const CorpusSpec& spec) {
  const CorpusModel model = build_corpus_model(spec);
  const std::size_t V = spec.vocab;
  Rng rng(Rng::derive(spec.seed, 0xC0DE));
  std::vector<LabeledExample> out;
  out.reserve(spec.size);
  for (std::size_t e = 0; e < spec.size; ++e) {
    LabeledExample ex;
    ex.label = static_cast<int>(e % spec.labels.size());
    const auto& trans = model.transitions[static_cast<std::size_t>(ex.label)];
    ex.ids.resize(spec.seq_len);
    std::size_t cur = sample_categorical(model.profile[static_cast<std::size_t>(ex.label)], rng);
    ex.ids[0] = static_cast<int>(cur);
    for (std::size_t i = 1; i < spec.seq_len; ++i) {
      cur = sample_categorical(std::span<const double>(trans).subspan(cur * V, V), rng);
      ex.ids[i] = static_cast<int>(cur);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

Split split(const std::vector<LabeledExample>& corpus, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)", "split.ratio");
  int max_label = 0;
  for (const auto& ex : corpus) max_label = std::max(max_label, ex.label);
  std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < corpus.size(); ++i) by_label[static_cast<std::size_t>(corpus[i].label)].push_back(i);

  // largest-remainder apportionment so the train total is round(ratio * n)
  const auto target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(corpus.size())));
  std::vector<std::size_t> quota(by_label.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t l = 0; l < by_label.size(); ++l) {
    const double exact = ratio * static_cast<double>(by_label[l].size());
    quota[l] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[l];
    remainders.emplace_back(exact - std::floor(exact), l);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < target && k < remainders.size(); ++k, ++assigned) ++quota[remainders[k].second];

  Rng rng(seed);
  std::vector<bool> in_train(corpus.size(), false);
  for (std::size_t l = 0; l < by_label.size(); ++l) {
    auto idx = by_label[l];
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    for (std::size_t k = 0; k < quota[l]; ++k) in_train[idx[k]] = true;
  }
  Split out;
  for (std::size_t i = 0; i < corpus.size(); ++i) (in_train[i] ? out.train : out.test).push_back(corpus[i]);
  return out;
}

void save_corpus(std::ostream& os, const Corpus& corpus) {
  nlohmann::ordered_json header;
  header["corpus_spec"] = spec_json(corpus.spec);
  os << header.dump() << '\n';
  for (const auto& ex : corpus.examples) {
    nlohmann::ordered_json line;
    line["ids"] = ex.ids;
    line["label"] = corpus.spec.labels.at(static_cast<std::size_t>(ex.label));
    os << line.dump() << '\n';
  }
}

Corpus load_corpus(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("corpus file is empty", "corpus");
  Corpus corpus;
  const auto header = nlohmann::json::parse(line);
  if (!header.contains("corpus_spec")) throw ConfigError("missing corpus_spec header line", "corpus");
  corpus.spec = spec_from(header.at("corpus_spec"));
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    LabeledExample ex;
    ex.ids = j.at("ids").get<TokenIds>();
    const auto name = j.at("label").get<std::string>();
    const auto it = std::find(corpus.spec.labels.begin(), corpus.spec.labels.end(), name);
    if (it == corpus.spec.labels.end()) {
      throw ConfigError("unknown label '" + name + "' on line " + std::to_string(lineno), "corpus");
    }
    ex.label = static_cast<int>(it - corpus.spec.labels.begin());
    for (int id : ex.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= corpus.spec.vocab) {
        throw IndexError("token id out of range on line " + std::to_string(lineno));
      }
    }
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open for writing", path);
  save_corpus(os, corpus);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open corpus file", path);
  return load_corpus(is);
}

std::vector<TokenIds> sequences_of(const std::vector<LabeledExample>& examples) {
  std::vector<TokenIds> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(ex.ids);
  return out;
}

}  // namespace tta
