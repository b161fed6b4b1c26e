#include <algorithm>
#include <cmath>

#include "tta/error.hpp"
#include "tta/models.hpp"

namespace tta {

ClassifierParams init_classifier(const ClassifierConfig& c, Rng& rng) {
  if (c.labels < 2) throw ConfigError("classifier needs at least two labels", "classifier.labels");
  if (c.vocab < 2 || c.d_model == 0) throw ConfigError("invalid classifier dimensions", "classifier");
  if (!(c.temperature > 0.0)) throw ConfigError("temperature must be > 0", "classifier.temperature");
  auto gaussian = [&](ad::Shape shape, double sd) {
    ad::Tensor t(std::move(shape), 0.0);
    for (double& v : t.data()) v = rng.normal(0.0, sd);
    return t;
  };
  const double sd = 1.0 / std::sqrt(static_cast<double>(c.d_model));
  ClassifierParams p;
  p.config = c;
  p.store.add("in_w", gaussian({c.vocab, c.d_model}, 1.0));
  p.store.add("in_b", ad::Tensor({c.d_model}, 0.0));
  p.store.add("hid_w", gaussian({c.d_model, c.d_model}, sd));
  p.store.add("hid_b", ad::Tensor({c.d_model}, 0.0));
  p.store.add("out_w", gaussian({c.d_model, c.labels}, sd));
  p.store.add("out_b", ad::Tensor({c.labels}, 0.0));
  return p;
}

ad::Var classify_forward(const BoundParams& bp, const ClassifierConfig& c, ad::Var stacked, std::size_t batch) {
  const ad::Tensor& xv = stacked.value();
  if (xv.rank() != 2 || xv.dim(1) != c.vocab) throw DimensionError("classify: expected [B*N x V] input");
  if (batch == 0 || xv.dim(0) % batch != 0) throw DimensionError("classify: rows not divisible by batch");
  const std::size_t n = xv.dim(0) / batch;
  ad::Tensor pool({batch, batch * n}, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i) pool.at(b, b * n + i) = 1.0 / static_cast<double>(n);

  ad::Tape& tape = *stacked.tape;
  ad::Var probs = ad::softmax(c.temperature == 1.0 ? stacked : ad::scale(stacked, 1.0 / c.temperature));
  ad::Var e = ad::add(ad::matmul(probs, bp["in_w"]), bp["in_b"]);
  ad::Var pooled = ad::matmul(tape.constant(std::move(pool)), e);
  ad::Var h = ad::relu(ad::add(ad::matmul(pooled, bp["hid_w"]), bp["hid_b"]));
  return ad::add(ad::matmul(h, bp["out_w"]), bp["out_b"]);
}

std::vector<double> classify(const ClassifierParams& params, const SimplexState& x) {
  ad::Tape tape;
  const BoundParams bound(tape, params.store);
  ad::Var logits = classify_forward(bound, params.config, tape.constant(x.logits), 1);
  const ad::Tensor probs = ad::softmax_rows(logits.value());
  return {probs.data().begin(), probs.data().end()};
}

LabelGradient label_log_prob_gradient(const ClassifierParams& params, const SimplexState& x, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= params.config.labels) {
    throw IndexError("target label outside the classifier's label range");
  }
  ad::Tape tape;
  const BoundParams bound(tape, params.store);
  ad::Var input = tape.leaf(x.logits);
  const int target[1] = {label};
  ad::Var nll = ad::cross_entropy(classify_forward(bound, params.config, input, 1), target);
  const ad::Gradients grads = tape.backward(nll);
  LabelGradient out;
  out.log_prob = -nll.value().item();
  out.grad = grads.of(input);
  for (double& g : out.grad.data()) g = -g;
  return out;
}

double classifier_accuracy(const ClassifierParams& params, const std::vector<LabeledExample>& data, double K) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : data) {
    const auto probs = classify(params, encode_tokens(ex.ids, params.config.vocab, K));
    const auto best = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    correct += best == ex.label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace tta
