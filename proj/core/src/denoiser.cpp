#include <cmath>
#include <string>

#include "tta/error.hpp"
#include "tta/models.hpp"

namespace tta {

namespace {

ad::Tensor gaussian(ad::Shape shape, double stddev, Rng& rng) {
  ad::Tensor t(std::move(shape), 0.0);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

std::string block_name(std::size_t b, const char* leaf) { return "block" + std::to_string(b) + "." + leaf; }

}  // namespace

DenoiserParams init_denoiser(const DenoiserConfig& c, Rng& rng) {
  if (c.vocab < 2 || c.d_model == 0 || c.heads == 0 || c.d_model % c.heads != 0 || c.ff == 0 || c.max_len == 0) {
    throw ConfigError("invalid denoiser dimensions", "model");
  }
  if (c.T < 1) throw ConfigError("T must be >= 1", "model.T");
  const std::size_t d = c.d_model;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  DenoiserParams p;
  p.config = c;
  auto& s = p.store;
  s.add("tok_emb", gaussian({c.vocab, d}, 1.0, rng));
  s.add("pos_emb", gaussian({c.max_len, d}, 0.1, rng));
  s.add("time_w", gaussian({d, d}, sd, rng));
  s.add("time_b", ad::Tensor({d}, 0.0));
  for (std::size_t b = 0; b < c.blocks; ++b) {
    s.add(block_name(b, "ln1_g"), ad::Tensor({d}, 1.0));
    s.add(block_name(b, "ln1_b"), ad::Tensor({d}, 0.0));
    s.add(block_name(b, "wq"), gaussian({d, d}, sd, rng));
    s.add(block_name(b, "wk"), gaussian({d, d}, sd, rng));
    s.add(block_name(b, "wv"), gaussian({d, d}, sd, rng));
    s.add(block_name(b, "wo"), gaussian({d, d}, sd, rng));
    s.add(block_name(b, "ln2_g"), ad::Tensor({d}, 1.0));
    s.add(block_name(b, "ln2_b"), ad::Tensor({d}, 0.0));
    s.add(block_name(b, "w1"), gaussian({d, c.ff}, sd, rng));
    s.add(block_name(b, "b1"), ad::Tensor({c.ff}, 0.0));
    s.add(block_name(b, "w2"), gaussian({c.ff, d}, 1.0 / std::sqrt(static_cast<double>(c.ff)), rng));
    s.add(block_name(b, "b2"), ad::Tensor({d}, 0.0));
  }
  s.add("lnf_g", ad::Tensor({d}, 1.0));
  s.add("lnf_b", ad::Tensor({d}, 0.0));
  s.add("out_w", gaussian({d, c.vocab}, sd, rng));
  s.add("out_b", ad::Tensor({c.vocab}, 0.0));
  return p;
}

ad::Tensor timestep_features(const TimestepPlan& plan, int T, std::size_t dim) {
  ad::Tensor out({plan.size(), dim}, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const double pos = 1000.0 * static_cast<double>(plan[i]) / static_cast<double>(T);
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
      out.at(i, k) = std::sin(pos * freq);
      out.at(i, half + k) = std::cos(pos * freq);
    }
  }
  return out;
}

ad::Var denoise_forward(ad::Tape& tape, const BoundParams& bp, const DenoiserConfig& c,
                        const std::vector<const SimplexState*>& states, const std::vector<const TimestepPlan*>& plans) {
  if (states.empty() || states.size() != plans.size()) throw DimensionError("denoise: states and plans differ in count");
  const std::size_t batch = states.size();
  const std::size_t n = states[0]->seq_len();
  const std::size_t V = c.vocab, d = c.d_model;
  if (n == 0 || n > c.max_len) throw DimensionError("denoise: sequence length outside [1, max_len]");

  ad::Tensor stacked({batch * n, V}, 0.0);
  ad::Tensor tfeat({batch * n, d}, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const SimplexState& st = *states[b];
    if (st.seq_len() != n || st.vocab_size() != V) throw DimensionError("denoise: state shape mismatch");
    if (plans[b]->size() != n) throw DimensionError("denoise: plan length mismatch");
    for (int t : plans[b]->t) {
      if (t < 0 || t > c.T) throw IndexError("denoise: timestep outside [0, T]");
    }
    std::copy(st.logits.data().begin(), st.logits.data().end(), stacked.data().begin() + static_cast<std::ptrdiff_t>(b * n * V));
    const ad::Tensor tf = timestep_features(*plans[b], c.T, d);
    std::copy(tf.data().begin(), tf.data().end(), tfeat.data().begin() + static_cast<std::ptrdiff_t>(b * n * d));
  }

  ad::Var x = tape.constant(std::move(stacked));
  ad::Var h = ad::matmul(ad::softmax(x), bp["tok_emb"]);
  if (c.positional) {
    std::vector<std::size_t> pos(batch * n);
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i % n;
    h = ad::add(h, ad::gather_rows(bp["pos_emb"], pos));
  }
  h = ad::add(h, ad::add(ad::matmul(tape.constant(std::move(tfeat)), bp["time_w"]), bp["time_b"]));

  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(d / c.heads));
  for (std::size_t blk = 0; blk < c.blocks; ++blk) {
    auto P = [&](const char* leaf) { return bp[block_name(blk, leaf)]; };
    ad::Var a = ad::layer_norm(h, P("ln1_g"), P("ln1_b"));
    ad::Var q = ad::split_heads(ad::matmul(a, P("wq")), batch, n, c.heads);
    ad::Var k = ad::split_heads(ad::matmul(a, P("wk")), batch, n, c.heads);
    ad::Var v = ad::split_heads(ad::matmul(a, P("wv")), batch, n, c.heads);
    ad::Var att = ad::softmax(ad::scale(ad::bmm(q, k, true), attn_scale));
    ad::Var ctx = ad::merge_heads(ad::bmm(att, v), batch, n);
    h = ad::add(h, ad::matmul(ctx, P("wo")));

    ad::Var a2 = ad::layer_norm(h, P("ln2_g"), P("ln2_b"));
    ad::Var f = ad::relu(ad::add(ad::matmul(a2, P("w1")), P("b1")));
    h = ad::add(h, ad::add(ad::matmul(f, P("w2")), P("b2")));
  }
  h = ad::layer_norm(h, bp["lnf_g"], bp["lnf_b"]);
  return ad::add(ad::matmul(h, bp["out_w"]), bp["out_b"]);
}

ad::Tensor denoise(const DenoiserParams& params, const SimplexState& x, const TimestepPlan& plan) {
  return denoise_batch(params, {x}, {plan}).front();
}

std::vector<ad::Tensor> denoise_batch(const DenoiserParams& params, const std::vector<SimplexState>& xs,
                                      const std::vector<TimestepPlan>& plans) {
  std::vector<const SimplexState*> sp;
  std::vector<const TimestepPlan*> pp;
  for (const auto& x : xs) sp.push_back(&x);
  for (const auto& p : plans) pp.push_back(&p);
  ad::Tape tape;
  const BoundParams bound(tape, params.store);
  const ad::Tensor& all = denoise_forward(tape, bound, params.config, sp, pp).value();
  const std::size_t n = xs.front().seq_len(), V = params.config.vocab;
  std::vector<ad::Tensor> out;
  out.reserve(xs.size());
  for (std::size_t b = 0; b < xs.size(); ++b) {
    auto first = all.data().begin() + static_cast<std::ptrdiff_t>(b * n * V);
    out.emplace_back(ad::Shape{n, V}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n * V)));
  }
  return out;
}

}  // namespace tta
