// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "atck/tape.hpp"
#include "atck/tensor.hpp"

namespace atck {

// Named trainable tensors plus their gradient accumulators and AdamW state.
// Entries keep insertion order; every sweep (updates, serialization) walks
// them in that order, which is part of the determinism story.
struct ParamStore {
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
  };

  std::vector<Entry> entries;
  std::map<std::string, int> index;

  int add(const std::string& name, Tensor init);
  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;
  bool has(const std::string& name) const { return index.count(name) > 0; }
  void zero_grads();
  int64_t param_count() const;
};

// Ties tape leaves to store entries so gradients can be flushed back after
// backward. One binding per training instance graph.
struct ParamBinding {
  std::vector<std::pair<int, NodeId>> pairs;  // (store entry index, leaf node)

  NodeId leaf(Tape<float>& tape, ParamStore& store, const std::string& name);
  // store.grad += scale * tape.grad, walked in binding order.
  void flush_grads(Tape<float>& tape, ParamStore& store, double scale) const;
};

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int warmup = 100;  // linear warmup steps, then constant
};

// AdamW with bias correction and decoupled multiplicative weight decay.
// Decay runs before the moment update: theta *= (1 - lr_t * wd).
struct AdamW {
  AdamWConfig cfg;
  int64_t t = 0;

  double lr_at(int64_t step) const;  // step is 1-indexed
  void step(ParamStore& store);
};

}  // namespace atck
