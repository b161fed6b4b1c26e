#pragma once

// Synthetic attribute-controllable corpora: a shared sparse bigram backbone
// whose transitions are tilted toward a label-specific set of attribute tokens.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tta/diffusion.hpp"

namespace tta {

struct CorpusSpec {
  std::size_t vocab = 64;
  std::size_t seq_len = 16;
  std::vector<std::string> labels{"negative", "positive"};
  std::size_t size = 10000;
  std::uint64_t seed = 1;
  std::size_t branching = 6;         // likely successors per token in the backbone
  double backbone_floor = 0.05;      // mass spread uniformly over all successors
  std::size_t attribute_tokens = 12;  // tokens tilted up per label
  double tilt = 8.0;                 // multiplicative weight on attribute tokens

  void validate() const;
  std::string to_json() const;
  static CorpusSpec from_json(const std::string& text);
  friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

struct LabeledExample {
  TokenIds ids;
  int label = 0;
  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

/// Transition model derived deterministically from a spec.
struct CorpusModel {
  std::size_t vocab = 0;
  /// transitions[label][a * V + b] = P(b | a, label)
  std::vector<std::vector<double>> transitions;
  /// Stationary unigram distribution per label; also the start distribution.
  std::vector<std::vector<double>> profile;
  /// Attribute token set per label (disjoint across labels).
  std::vector<std::vector<int>> attribute_sets;
};

CorpusModel build_corpus_model(const CorpusSpec& spec);

/// Labels are assigned round-robin; sequences start from the label's stationary
/// distribution, so every position has the profile as its marginal.
std::vector<LabeledExample> synthesize(const CorpusSpec& spec);

struct Split {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
};

/// Label-stratified partition; train receives round(ratio * n) examples.
Split split(const std::vector<LabeledExample>& corpus, double ratio, std::uint64_t seed);

struct Corpus {
  CorpusSpec spec;
  std::vector<LabeledExample> examples;
};

/// JSONL: a header line {"corpus_spec": {...}} then one {"ids": [...], "label": "..."} per example.
void save_corpus(std::ostream& os, const Corpus& corpus);
Corpus load_corpus(std::istream& is);
void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

std::vector<TokenIds> sequences_of(const std::vector<LabeledExample>& examples);

}  // namespace tta
