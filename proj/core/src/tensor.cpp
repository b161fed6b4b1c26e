#include "tta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

#include "tta/error.hpp"

namespace tta::ad {

namespace {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void require_same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ContractError("operands belong to different tapes");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

void softmax_row(std::span<const double> x, std::span<double> y) {
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    y[j] = std::exp(x[j] - mx);
    z += y[j];
  }
  for (double& v : y) v /= z;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---- Tensor -----------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("axis out of range for " + shape_str(shape_));
  return shape_[axis];
}

std::size_t Tensor::rows() const noexcept {
  const std::size_t c = cols();
  return c == 0 ? 0 : data_.size() / c;
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---- Tape -------------------------------------------------------------------

const Tensor& Var::value() const {
  if (tape == nullptr) throw ContractError("Var is not attached to a tape");
  return tape->value(*this);
}

const Tensor& Gradients::of(Var v) const {
  if (v.id >= grads_.size()) throw ContractError("Var does not belong to the differentiated tape");
  return grads_[v.id];
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw ContractError("Var does not belong to this tape");
  return nodes_[v.id].value;
}

bool Tape::requires_grad(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw ContractError("Var does not belong to this tape");
  return nodes_[v.id].requires_grad;
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, Adjoint adjoint) {
  bool needs = false;
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw ContractError("op input recorded after its output");
    needs = needs || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), std::move(inputs), needs ? std::move(adjoint) : nullptr, needs});
  return Var{this, nodes_.size() - 1};
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape != this || loss.id >= nodes_.size()) throw ContractError("loss is not on this tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(nodes_[loss.id].value.shape()));
  }
  Gradients out;
  out.grads_.resize(nodes_.size());
  std::vector<bool> live(nodes_.size(), false);
  out.grads_[loss.id] = Tensor(nodes_[loss.id].value.shape(), 1.0);
  live[loss.id] = true;

  std::vector<Tensor*> in_grads;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!live[i] || !node.adjoint) continue;
    in_grads.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (!live[in]) {
        out.grads_[in] = Tensor(nodes_[in].value.shape(), 0.0);
        live[in] = true;
      }
      in_grads[k] = &out.grads_[in];
    }
    node.adjoint(out.grads_[i], in_grads);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!live[i]) out.grads_[i] = Tensor(nodes_[i].value.shape(), 0.0);
  }
  return out;
}

// ---- ops ----------------------------------------------------------------------

Var add(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return a.tape->record(std::move(out), {a.id, b.id}, [](const Tensor& g, std::span<Tensor* const> in) {
      for (Tensor* t : in) {
        if (!t) continue;
        for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
      }
    });
  }
  if (bv.rank() == 1 && av.rank() >= 1 && bv.size() == av.cols()) {
    Tensor out = av;
    const std::size_t c = av.cols();
    for (std::size_t r = 0; r < av.rows(); ++r)
      for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bv[j];
    return a.tape->record(std::move(out), {a.id, b.id}, [c](const Tensor& g, std::span<Tensor* const> in) {
      if (in[0])
        for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
      if (in[1])
        for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i % c] += g[i];
    });
  }
  throw DimensionError("add: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape("sub", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [](const Tensor& g, std::span<Tensor* const> in) {
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
    if (in[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape("mul", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tape* tape = a.tape;
  return tape->record(std::move(out), {a.id, b.id}, [tape, a, b](const Tensor& g, std::span<Tensor* const> in) {
    const Tensor& av = tape->value(a);
    const Tensor& bv = tape->value(b);
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * bv[i];
    if (in[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * av[i];
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return a.tape->record(std::move(out), {a.id}, [factor](const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += factor * g[i];
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  Tape* tape = a.tape;
  return tape->record(std::move(out), {a.id}, [tape, a](const Tensor& g, std::span<Tensor* const> in) {
    const Tensor& x = tape->value(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) (*in[0])[i] += g[i];
  });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank("matmul", av, 2);
  require_rank("matmul", bv, 2);
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(av.shape()) + " * " + shape_str(bv.shape()));
  }
  Tensor out({m, n}, 0.0);
  gemm_acc(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  Tape* tape = a.tape;
  return tape->record(std::move(out), {a.id, b.id}, [tape, a, b, m, k, n](const Tensor& g, std::span<Tensor* const> in) {
    const Tensor& av = tape->value(a);
    const Tensor& bv = tape->value(b);
    if (in[0]) gemm_nt_acc(g.data().data(), bv.data().data(), in[0]->data().data(), m, n, k);
    if (in[1]) gemm_tn_acc(av.data().data(), g.data().data(), in[1]->data().data(), m, k, n);
  });
}

Var bmm(Var a, Var b, bool transpose_b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank("bmm", av, 3);
  require_rank("bmm", bv, 3);
  const std::size_t groups = av.dim(0), m = av.dim(1), k = av.dim(2);
  const std::size_t n = transpose_b ? bv.dim(1) : bv.dim(2);
  const std::size_t bk = transpose_b ? bv.dim(2) : bv.dim(1);
  if (bv.dim(0) != groups || bk != k) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  Tensor out({groups, m, n}, 0.0);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double* ap = av.data().data() + gi * m * k;
    const double* bp = bv.data().data() + gi * k * n;
    double* op = out.data().data() + gi * m * n;
    if (transpose_b)
      gemm_nt_acc(ap, bp, op, m, k, n);
    else
      gemm_acc(ap, bp, op, m, k, n);
  }
  Tape* tape = a.tape;
  return tape->record(std::move(out), {a.id, b.id},
                      [tape, a, b, groups, m, k, n, transpose_b](const Tensor& g, std::span<Tensor* const> in) {
                        const Tensor& av = tape->value(a);
                        const Tensor& bv = tape->value(b);
                        for (std::size_t gi = 0; gi < groups; ++gi) {
                          const double* ap = av.data().data() + gi * m * k;
                          const double* bp = bv.data().data() + gi * k * n;
                          const double* gp = g.data().data() + gi * m * n;
                          if (in[0]) {
                            double* ga = in[0]->data().data() + gi * m * k;
                            if (transpose_b)
                              gemm_acc(gp, bp, ga, m, n, k);  // g[m x n] * b[n x k]
                            else
                              gemm_nt_acc(gp, bp, ga, m, n, k);  // g[m x n] * b[k x n]^T
                          }
                          if (in[1]) {
                            double* gb = in[1]->data().data() + gi * k * n;
                            if (transpose_b)
                              gemm_tn_acc(gp, ap, gb, m, n, k);  // g^T[n x m] * a[m x k]
                            else
                              gemm_tn_acc(ap, gp, gb, m, k, n);  // a^T[k x m] * g[m x n]
                          }
                        }
                      });
}

Var softmax(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) softmax_row(x.row(r), out.row(r));
  Tape* tape = a.tape;
  const std::size_t self = tape->size();
  return tape->record(std::move(out), {a.id}, [tape, self](const Tensor& g, std::span<Tensor* const> in) {
    const Tensor& y = tape->value(Var{tape, self});
    const std::size_t c = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
      for (std::size_t j = 0; j < c; ++j) (*in[0])[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
    }
  });
}

Var log_softmax(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape(), 0.0);
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    const double mx = *std::max_element(xr.begin(), xr.end());
    double z = 0.0;
    for (double v : xr) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xr[j] - lse;
  }
  Tape* tape = a.tape;
  const std::size_t self = tape->size();
  return tape->record(std::move(out), {a.id}, [tape, self](const Tensor& g, std::span<Tensor* const> in) {
    const Tensor& y = tape->value(Var{tape, self});
    const std::size_t c = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += g[r * c + j];
      for (std::size_t j = 0; j < c; ++j) (*in[0])[r * c + j] += g[r * c + j] - std::exp(y[r * c + j]) * gs;
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  if (gain.value().shape() != Shape{d} || bias.value().shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  }
  const std::size_t rows = xv.rows();
  Tensor out(xv.shape(), 0.0);
  // normalized inputs and inverse std per row, kept for the adjoint
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = xv.row(r);
    double mu = 0.0;
    for (double v : xr) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x.id, gain.id, bias.id},
                      [tape, gain, xhat, inv_std, rows, d](const Tensor& g, std::span<Tensor* const> in) {
                        const Tensor& gv = tape->value(gain);
                        std::vector<double> gh(d);
                        for (std::size_t r = 0; r < rows; ++r) {
                          double m1 = 0.0, m2 = 0.0;
                          for (std::size_t j = 0; j < d; ++j) {
                            const double gij = g[r * d + j];
                            const double h = (*xhat)[r * d + j];
                            if (in[1]) (*in[1])[j] += gij * h;
                            if (in[2]) (*in[2])[j] += gij;
                            gh[j] = gij * gv[j];
                            m1 += gh[j];
                            m2 += gh[j] * h;
                          }
                          if (!in[0]) continue;
                          m1 /= static_cast<double>(d);
                          m2 /= static_cast<double>(d);
                          for (std::size_t j = 0; j < d; ++j) {
                            (*in[0])[r * d + j] += (*inv_std)[r] * (gh[j] - m1 - (*xhat)[r * d + j] * m2);
                          }
                        }
                      });
}

Var embedding_lookup(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  require_rank("embedding_lookup", tv, 2);
  const std::size_t vocab = tv.dim(0), d = tv.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  Tensor out({idx.size(), d}, 0.0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(idx[i]) + " outside [0, " + std::to_string(vocab) + ")");
    }
    std::copy_n(tv.row(idx[i]).begin(), d, out.row(i).begin());
  }
  return table.tape->record(std::move(out), {table.id}, [idx, d](const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) (*in[0])[static_cast<std::size_t>(idx[i]) * d + j] += g[i * d + j];
  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  require_rank("gather_rows", xv, 2);
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out({idx.size(), d}, 0.0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw IndexError("gather_rows: row " + std::to_string(idx[i]) + " outside [0, " + std::to_string(n) + ")");
    std::copy_n(xv.row(idx[i]).begin(), d, out.row(i).begin());
  }
  return x.tape->record(std::move(out), {x.id}, [idx, d](const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) (*in[0])[idx[i] * d + j] += g[i * d + j];
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& lv = logits.value();
  require_rank("cross_entropy", lv, 2);
  const std::size_t n = lv.dim(0), vocab = lv.dim(1);
  if (targets.size() != n) throw DimensionError("cross_entropy: target count differs from logit rows");
  if (n == 0) throw DimensionError("cross_entropy: empty batch");
  std::vector<int> tgt(targets.begin(), targets.end());
  auto probs = std::make_shared<Tensor>(lv.shape(), 0.0);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(tgt[r]) + " outside [0, " + std::to_string(vocab) + ")");
    }
    auto xr = lv.row(r);
    const double mx = *std::max_element(xr.begin(), xr.end());
    double z = 0.0;
    for (double v : xr) z += std::exp(v - mx);
    loss -= xr[static_cast<std::size_t>(tgt[r])] - mx - std::log(z);
    softmax_row(xr, probs->row(r));
  }
  loss /= static_cast<double>(n);
  return logits.tape->record(Tensor::scalar(loss), {logits.id},
                             [probs, tgt, n, vocab](const Tensor& g, std::span<Tensor* const> in) {
                               const double s = g[0] / static_cast<double>(n);
                               for (std::size_t r = 0; r < n; ++r) {
                                 for (std::size_t j = 0; j < vocab; ++j) (*in[0])[r * vocab + j] += s * (*probs)[r * vocab + j];
                                 (*in[0])[r * vocab + static_cast<std::size_t>(tgt[r])] -= s;
                               }
                             });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  return a.tape->record(Tensor::scalar(s), {a.id}, [](const Tensor& g, std::span<Tensor* const> in) {
    for (double& v : in[0]->data()) v += g[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var reshape(Var a, Shape shape) {
  const Tensor& av = a.value();
  if (shape_size(shape) != av.size()) {
    throw DimensionError("reshape: " + shape_str(av.shape()) + " to " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(av.data().begin(), av.data().end()));
  return a.tape->record(std::move(out), {a.id}, [](const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
  });
}

Var split_heads(Var x, std::size_t batch, std::size_t seq_len, std::size_t heads) {
  const Tensor& xv = x.value();
  require_rank("split_heads", xv, 2);
  const std::size_t d = xv.dim(1);
  if (xv.dim(0) != batch * seq_len || heads == 0 || d % heads != 0) {
    throw DimensionError("split_heads: " + shape_str(xv.shape()) + " incompatible with batch/seq/heads");
  }
  const std::size_t dh = d / heads;
  Tensor out({batch * heads, seq_len, dh}, 0.0);
  // out[(b*h + hh), n, j] = x[b*N + n, hh*dh + j]
  auto index = [=](std::size_t b, std::size_t hh, std::size_t n, std::size_t j) {
    return std::pair{((b * heads + hh) * seq_len + n) * dh + j, (b * seq_len + n) * d + hh * dh + j};
  };
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t hh = 0; hh < heads; ++hh)
      for (std::size_t n = 0; n < seq_len; ++n)
        for (std::size_t j = 0; j < dh; ++j) {
          auto [o, i] = index(b, hh, n, j);
          out[o] = xv[i];
        }
  return x.tape->record(std::move(out), {x.id}, [=](const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t hh = 0; hh < heads; ++hh)
        for (std::size_t n = 0; n < seq_len; ++n)
          for (std::size_t j = 0; j < dh; ++j) {
            auto [o, i] = index(b, hh, n, j);
            (*in[0])[i] += g[o];
          }
  });
}

Var merge_heads(Var x, std::size_t batch, std::size_t seq_len) {
  const Tensor& xv = x.value();
  require_rank("merge_heads", xv, 3);
  if (batch == 0 || xv.dim(0) % batch != 0 || xv.dim(1) != seq_len) {
    throw DimensionError("merge_heads: " + shape_str(xv.shape()) + " incompatible with batch/seq");
  }
  const std::size_t heads = xv.dim(0) / batch, dh = xv.dim(2), d = heads * dh;
  Tensor out({batch * seq_len, d}, 0.0);
  auto index = [=](std::size_t b, std::size_t hh, std::size_t n, std::size_t j) {
    return std::pair{(b * seq_len + n) * d + hh * dh + j, ((b * heads + hh) * seq_len + n) * dh + j};
  };
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t hh = 0; hh < heads; ++hh)
      for (std::size_t n = 0; n < seq_len; ++n)
        for (std::size_t j = 0; j < dh; ++j) {
          auto [o, i] = index(b, hh, n, j);
          out[o] = xv[i];
        }
  return x.tape->record(std::move(out), {x.id}, [=](const Tensor& g, std::span<Tensor* const> in) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t hh = 0; hh < heads; ++hh)
        for (std::size_t n = 0; n < seq_len; ++n)
          for (std::size_t j = 0; j < dh; ++j) {
            auto [o, i] = index(b, hh, n, j);
            (*in[0])[i] += g[o];
          }
  });
}

// ---- plain helpers ------------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  Tensor out(x.shape(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) softmax_row(x.row(r), out.row(r));
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0)) throw DimensionError("matmul: inner dimensions differ");
  Tensor out({a.dim(0), b.dim(1)}, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data().data(), a.dim(0), a.dim(1), b.dim(1));
  return out;
}

}  // namespace tta::ad
