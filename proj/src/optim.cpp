// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#include "atck/optim.hpp"

#include <cmath>

namespace atck {

int ParamStore::add(const std::string& name, Tensor init) {
  check(!index.count(name), "ParamStore: duplicate parameter '" + name + "'");
  Entry e;
  e.name = name;
  e.grad = Tensor::zeros(init.dims);
  e.m = Tensor::zeros(init.dims);
  e.v = Tensor::zeros(init.dims);
  e.value = std::move(init);
  entries.push_back(std::move(e));
  index[name] = int(entries.size()) - 1;
  return int(entries.size()) - 1;
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
  auto it = index.find(name);
  check(it != index.end(), "ParamStore: unknown parameter '" + name + "'");
  return entries[size_t(it->second)];
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
  auto it = index.find(name);
  check(it != index.end(), "ParamStore: unknown parameter '" + name + "'");
  return entries[size_t(it->second)];
}

void ParamStore::zero_grads() {
  for (Entry& e : entries)
    std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0f);
}

int64_t ParamStore::param_count() const {
  int64_t n = 0;
  for (const Entry& e : entries) n += e.value.numel();
  return n;
}

NodeId ParamBinding::leaf(Tape<float>& tape, ParamStore& store,
                          const std::string& name) {
  auto it = store.index.find(name);
  check(it != store.index.end(), "ParamBinding: unknown parameter '" + name + "'");
  NodeId id = tape.leaf(store.entries[size_t(it->second)].value);
  pairs.emplace_back(it->second, id);
  return id;
}

void ParamBinding::flush_grads(Tape<float>& tape, ParamStore& store,
                               double scale) const {
  for (const auto& [idx, node] : pairs) {
    if (!tape.requires_grad(node)) continue;
    Tensor& dst = store.entries[size_t(idx)].grad;
    const Tensor& src = tape.grad(node);
    check(src.dims == dst.dims, "flush_grads: shape mismatch");
    float s = float(scale);
    for (size_t i = 0; i < src.data.size(); ++i) dst.data[i] += s * src.data[i];
  }
}

double AdamW::lr_at(int64_t step) const {
  if (cfg.warmup <= 0) return cfg.lr;
  double w = double(step) / double(cfg.warmup);
  return cfg.lr * std::min(1.0, w);
}

void AdamW::step(ParamStore& store) {
  ++t;
  double lr = lr_at(t);
  double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (ParamStore::Entry& e : store.entries) {
    float* th = e.value.data.data();
    const float* g = e.grad.data.data();
    float* m = e.m.data.data();
    float* v = e.v.data.data();
    size_t nn = e.value.data.size();
    for (size_t i = 0; i < nn; ++i) {
      double theta = double(th[i]) * (1.0 - lr * cfg.weight_decay);
      double gi = double(g[i]);
      double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
      double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = float(mi);
      v[i] = float(vi);
      double mhat = mi / bc1;
      double vhat = vi / bc2;
      th[i] = float(theta - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace atck
