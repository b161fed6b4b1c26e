#include <algorithm>
#include <cmath>

#include "tta/error.hpp"
#include "tta/models.hpp"

namespace tta {

ReferenceLM ReferenceLM::fit(const std::vector<TokenIds>& corpus, std::size_t vocab, double k) {
  if (vocab < 2) throw ConfigError("vocabulary must hold at least 2 tokens", "reference_lm.vocab");
  if (!(k > 0.0)) throw ConfigError("smoothing constant must be > 0", "reference_lm.k");
  ReferenceLM lm;
  lm.vocab_ = vocab;
  lm.k_ = k;
  const std::size_t V = vocab;
  lm.uni_.assign(V, 0.0);
  lm.bi_.assign(V * V, 0.0);
  lm.bi_ctx_.assign(V, 0.0);
  lm.tri_.assign(V * V * V, 0.0);
  lm.tri_ctx_.assign(V * V, 0.0);
  for (const auto& seq : corpus) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i] < 0 || static_cast<std::size_t>(seq[i]) >= V) throw IndexError("reference LM: token out of range");
      const auto c = static_cast<std::size_t>(seq[i]);
      lm.uni_[c] += 1.0;
      lm.total_ += 1.0;
      if (i >= 1) {
        const auto b = static_cast<std::size_t>(seq[i - 1]);
        lm.bi_[b * V + c] += 1.0;
        lm.bi_ctx_[b] += 1.0;
      }
      if (i >= 2) {
        const auto a = static_cast<std::size_t>(seq[i - 2]);
        const auto b = static_cast<std::size_t>(seq[i - 1]);
        lm.tri_[(a * V + b) * V + c] += 1.0;
        lm.tri_ctx_[a * V + b] += 1.0;
      }
    }
  }
  return lm;
}

double ReferenceLM::unigram(int c) const {
  const double kv = k_ * static_cast<double>(vocab_);
  return (uni_.at(static_cast<std::size_t>(c)) + k_) / (total_ + kv);
}

double ReferenceLM::bigram(int b, int c) const {
  const double kv = k_ * static_cast<double>(vocab_);
  const auto bi = static_cast<std::size_t>(b);
  return (bi_.at(bi * vocab_ + static_cast<std::size_t>(c)) + kv * unigram(c)) / (bi_ctx_.at(bi) + kv);
}

double ReferenceLM::trigram(int a, int b, int c) const {
  const double kv = k_ * static_cast<double>(vocab_);
  const std::size_t ctx = static_cast<std::size_t>(a) * vocab_ + static_cast<std::size_t>(b);
  return (tri_.at(ctx * vocab_ + static_cast<std::size_t>(c)) + kv * bigram(b, c)) / (tri_ctx_.at(ctx) + kv);
}

double ReferenceLM::conditional(const TokenIds& ids, std::size_t i) const {
  if (i >= ids.size()) throw IndexError("reference LM: position out of range");
  for (std::size_t j = i >= 2 ? i - 2 : 0; j <= i; ++j) {
    if (ids[j] < 0 || static_cast<std::size_t>(ids[j]) >= vocab_) throw IndexError("reference LM: token out of range");
  }
  if (i == 0) return unigram(ids[0]);
  if (i == 1) return bigram(ids[0], ids[1]);
  return trigram(ids[i - 2], ids[i - 1], ids[i]);
}

std::array<int, 3> ReferenceLM::most_frequent_trigram() const {
  const auto it = std::max_element(tri_.begin(), tri_.end());
  const auto flat = static_cast<std::size_t>(it - tri_.begin());
  return {static_cast<int>(flat / (vocab_ * vocab_)), static_cast<int>((flat / vocab_) % vocab_),
          static_cast<int>(flat % vocab_)};
}

TokenIds ReferenceLM::sample(std::size_t length, Rng& rng) const {
  TokenIds ids;
  ids.reserve(length);
  for (std::size_t i = 0; i < length; ++i) {
    const double u = rng.uniform();
    double acc = 0.0;
    int pick = static_cast<int>(vocab_) - 1;
    ids.push_back(0);
    for (std::size_t c = 0; c < vocab_; ++c) {
      ids.back() = static_cast<int>(c);
      acc += conditional(ids, i);
      if (u < acc) {
        pick = static_cast<int>(c);
        break;
      }
    }
    ids.back() = pick;
  }
  return ids;
}

double reference_perplexity(const ReferenceLM& lm, const TokenIds& ids) {
  if (ids.empty()) throw ContractError("perplexity of an empty sequence");
  double nll = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) nll -= std::log(lm.conditional(ids, i));
  return std::exp(nll / static_cast<double>(ids.size()));
}

}  // namespace tta
