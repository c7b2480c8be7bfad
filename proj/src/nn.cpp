// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#include "wm4/nn.hpp"

#include <algorithm>
#include <cmath>

namespace wm4 {

Var ParamStore::add(const std::string& name, Tensor init) {
  if (has(name)) throw ConfigError("ParamStore: duplicate parameter " + name);
  Var v = make_param(std::move(init), name);
  order_.push_back(v);
  return v;
}

Var ParamStore::get(const std::string& name) const {
  for (const Var& v : order_)
    if (v->name == name) return v;
  throw ConfigError("ParamStore: no parameter named " + name);
}

bool ParamStore::has(const std::string& name) const {
  for (const Var& v : order_)
    if (v->name == name) return true;
  return false;
}

std::vector<Var> ParamStore::with_prefix(const std::string& prefix) const {
  std::vector<Var> out;
  for (const Var& v : order_)
    if (v->name.rfind(prefix, 0) == 0) out.push_back(v);
  return out;
}

std::vector<Var> ParamStore::trainable() const {
  std::vector<Var> out;
  for (const Var& v : order_)
    if (v->requires_grad) out.push_back(v);
  return out;
}

void ParamStore::set_trainable(const std::string& prefix, bool on) {
  for (const Var& v : order_)
    if (v->name.rfind(prefix, 0) == 0) v->requires_grad = on;
}

void ParamStore::set_all_trainable(bool on) {
  for (const Var& v : order_) v->requires_grad = on;
}

int64_t ParamStore::count(const std::string& prefix) const {
  int64_t n = 0;
  for (const Var& v : order_)
    if (v->name.rfind(prefix, 0) == 0) n += v->val.numel();
  return n;
}

int64_t ParamStore::count_trainable() const {
  int64_t n = 0;
  for (const Var& v : order_)
    if (v->requires_grad) n += v->val.numel();
  return n;
}

uint64_t ParamStore::content_hash() const {
  // XOR of per-parameter hashes: insensitive to registration order so that
  // structurally identical models compare equal.
  uint64_t h = 0x6b7764346e6e0001ull;
  for (const Var& v : order_) {
    uint64_t hp = fnv1a64(v->name);
    hp = fnv1a64(v->val.vec().data(), v->val.numel() * sizeof(double), hp);
    h ^= hp;
  }
  return h;
}

TensorArchive ParamStore::to_archive() const {
  TensorArchive ar;
  for (const Var& v : order_) ar.add(NamedTensor::f64(v->name, v->val.shape(), v->val.data()));
  return ar;
}

void ParamStore::load_archive(const TensorArchive& ar, bool strict) {
  size_t matched = 0;
  for (const Var& v : order_) {
    if (!ar.has(v->name)) {
      if (strict) throw IoError("checkpoint is missing parameter " + v->name);
      continue;
    }
    const NamedTensor& t = ar.get(v->name);
    if (t.dims != v->val.shape()) throw IoError("checkpoint shape mismatch for " + v->name);
    std::vector<double> vals = t.as_f64();
    std::copy(vals.begin(), vals.end(), v->val.data());
    ++matched;
  }
  if (strict && matched != ar.tensors.size())
    throw IoError("checkpoint holds parameters unknown to this model");
}

Adam::Adam(std::vector<Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Var& p : params_) {
    m_.emplace_back(p->val.shape(), 0.0);
    v_.emplace_back(p->val.shape(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Node& n = *params_[i];
    const double* g = n.has_grad ? n.grad.data() : nullptr;
    double* m = m_[i].data();
    double* v = v_[i].data();
    double* w = n.val.data();
    int64_t sz = n.val.numel();
    for (int64_t k = 0; k < sz; ++k) {
      double gk = g ? g[k] : 0.0;
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
      double mhat = m[k] / c1;
      double vhat = v[k] / c2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

Tensor init_linear(Rng& rng, int64_t fan_in, int64_t fan_out) {
  return Tensor::randn({fan_out, fan_in}, rng, 1.0 / std::sqrt(double(fan_in)));
}

Tensor init_normal(Rng& rng, Shape shape, double stddev) {
  return Tensor::randn(shape, rng, stddev);
}

Tensor init_zeros(Shape shape) { return Tensor(shape, 0.0); }

Tensor init_ones(Shape shape) { return Tensor(shape, 1.0); }

} // namespace wm4
