// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "atck/tape.hpp"

namespace atck {

// One quantization layer: K codewords of dimension D plus the EMA statistics
// that learn them.
struct Codebook {
  int layer_index = 0;
  Tensor codewords;   // [K, D]
  Tensor ema_counts;  // [K]
  Tensor ema_sums;    // [K, D]

  int size() const { return codewords.rows(); }
  int dim() const { return codewords.cols(); }
};

Codebook make_codebook(int layer_index, int k, int d);

// Token indices over quantization layers and time.
struct TokenHierarchy {
  int depth = 0;
  int length = 0;
  int codebook_size = 0;
  std::vector<int> indices;  // row-major [depth, length]

  int at(int layer, int t) const;
  void set(int layer, int t, int v);
};

TokenHierarchy make_hierarchy(int depth, int length, int codebook_size);

// Frame-aligned latent vectors produced by the codec encoder.
struct LatentSequence {
  Tensor vectors;  // [frames, D]
  double frame_rate = 0.0;
};

// Nearest codeword per time step under squared L2; ties break toward the
// lowest index. Returns (indices, quantized rows).
std::pair<std::vector<int>, Tensor> quantize_layer(const Tensor& residual,
                                                   const Codebook& cb);

struct EncodeResult {
  TokenHierarchy hierarchy;
  Tensor final_residual;  // [frames, D]
};

// Residual recursion r0 = z, r_{n+1} = r_n - quantize(r_n). The additive
// identity z = sum of quantized layers + final residual holds to 1e-5 per
// element for any codebooks.
EncodeResult rvq_encode(const Tensor& z, const std::vector<Codebook>& books,
                        int n_layers);

// Partial-sum decode over layers [0, up_to); up_to = 0 gives zeros.
Tensor rvq_decode(const TokenHierarchy& h, const std::vector<Codebook>& books,
                  int up_to);

// EMA codebook learning: counts <- g*counts + (1-g)*n_k, sums likewise over
// assigned vectors, codeword_k = sums_k / max(counts_k, 1e-5).
void ema_update(Codebook& cb, const Tensor& vectors,
                const std::vector<int>& assignments, double gamma);

// Replaces codes with ema_counts below the threshold by uniformly sampled
// batch rows (counts reset to 1). Returns how many were replaced.
int reinit_dead_codes(Codebook& cb, double usage_threshold, const Tensor& batch,
                      Rng& rng);

// Codebook init from the first batch of residuals: distance-weighted row
// sampling, then one Lloyd pass; EMA stats seeded from the pass assignments.
void kmeans_init(Codebook& cb, const Tensor& batch, Rng& rng);

// Tape helpers for training through quantization.
NodeId quantize_straight_through(Tape<float>& t, NodeId z, Tensor quantized);
NodeId commitment_loss(Tape<float>& t, NodeId z, const Tensor& quantized,
                       double beta);

}  // namespace atck
