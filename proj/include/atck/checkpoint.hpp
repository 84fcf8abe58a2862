// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "atck/sha256.hpp"
#include "atck/tensor.hpp"

namespace atck {

// Shared on-disk container for codec and language-model checkpoints:
// magic "ATCK", version, config digest plus the canonical config text it
// hashes, training step, then a named float32 tensor table.
struct Checkpoint {
  Digest config_digest{};
  std::string config_text;
  uint64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
  const Tensor& require(const std::string& name) const;
  void add(const std::string& name, Tensor t);
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Digest over every tensor (names, dims, payload bytes) plus the step; the
// determinism tests compare these across reruns.
Digest checkpoint_digest(const Checkpoint& ckpt);

}  // namespace atck
