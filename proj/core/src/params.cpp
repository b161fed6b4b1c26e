#include <cmath>

#include "tta/error.hpp"
#include "tta/models.hpp"

namespace tta {

void ParamStore::add(std::string name, ad::Tensor value) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ContractError("duplicate parameter '" + name + "'");
  }
  entries_.push_back(Entry{std::move(name), std::move(value)});
}

std::size_t ParamStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw ContractError("unknown parameter '" + name + "'");
}

const ad::Tensor& ParamStore::get(const std::string& name) const { return entries_[index_of(name)].value; }
ad::Tensor& ParamStore::get(const std::string& name) { return entries_[index_of(name)].value; }

std::size_t ParamStore::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

bool ParamStore::all_finite() const noexcept {
  for (const auto& e : entries_) {
    if (!e.value.all_finite()) return false;
  }
  return true;
}

BoundParams::BoundParams(ad::Tape& tape, const ParamStore& store) : store_(&store) {
  vars_.reserve(store.size());
  for (const auto& e : store.entries()) vars_.push_back(tape.leaf(e.value));
}

ad::Var BoundParams::operator[](const std::string& name) const { return vars_[store_->index_of(name)]; }

std::vector<ad::Tensor> BoundParams::gradients(const ad::Gradients& grads) const {
  std::vector<ad::Tensor> out;
  out.reserve(vars_.size());
  for (ad::Var v : vars_) out.push_back(grads.of(v));
  return out;
}

Adam::Adam(const ParamStore& store, Options opts) : opts_(opts) {
  for (const auto& e : store.entries()) {
    m_.emplace_back(e.value.shape(), 0.0);
    v_.emplace_back(e.value.shape(), 0.0);
  }
}

void Adam::step(ParamStore& store, std::vector<ad::Tensor>& grads) {
  if (grads.size() != m_.size()) throw ContractError("gradient count does not match parameter count");
  if (opts_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& g : grads)
      for (double x : g.data()) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm > opts_.clip_norm) {
      const double f = opts_.clip_norm / norm;
      for (auto& g : grads)
        for (double& x : g.data()) x *= f;
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  auto& entries = store.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto p = entries[k].value.data();
    auto g = grads[k].data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      p[i] -= opts_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opts_.eps);
    }
  }
}

}  // namespace tta
