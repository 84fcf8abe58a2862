// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-stage inference: the causal backbone samples the two coarse token
// layers for the requested duration, a fixed sweep of full-attention passes
// fills each remaining layer in order, and the codec renders the waveform.
#pragma once

#include <cstdint>
#include <vector>

#include "atck/codec.hpp"
#include "atck/lm.hpp"
#include "atck/sequence.hpp"

namespace atck {

struct GenerationRequest {
  TextCondition text;
  int depth = 0;  // 0 = the full depth the models support
  double temperature = 0.9;
  int top_k = 64;
  uint64_t seed = 0;
};

// Audit trail of one generation: whether the backbone tried to stop early,
// how many refinement passes ran, and a digest of every layer taken the
// moment it was fixed (later passes must never move them).
struct GenerationMeta {
  bool eos_early = false;
  int eos_step = -1;
  int sr_passes = 0;
  std::vector<uint64_t> layer_digests;
};

uint64_t layer_digest(const TokenHierarchy& h, int layer);

// Samples tau = round(duration * frame_rate) frames of layers 0 and 1, one
// frame at a time, each token restricted to its layer's block. The duration
// forces the length: an <eos> sampled before tau is recorded in the meta and
// the frame is resampled from layer 0 alone.
TokenHierarchy generate_backbone(const LMModel& backbone,
                                 const GenerationRequest& req,
                                 GenerationMeta* meta);

// Fills layers [from_layer, partial.depth) in order. Each layer is one
// full-attention forward pass conditioned on the codeword sums of the layers
// below, decoded greedily; exactly depth - from_layer passes run.
TokenHierarchy super_resolve(const LMModel& sr, const Codec& codec,
                             const GenerationRequest& req,
                             const TokenHierarchy& partial,
                             GenerationMeta* meta, int from_layer = 2);

// Decodes the first `depth` layers (0 = all of them) and clamps the samples
// into [-1, 1]. Output length is exactly h.length * hop.
Waveform render(const Codec& codec, const TokenHierarchy& h, int depth = 0);

struct GenerationResult {
  Waveform wave;
  TokenHierarchy tokens;
  GenerationMeta meta;
};

// Composition of the three stages with compatibility checks: the models must
// agree with the codec on codebook size and frame rate, and a model stamped
// with a codec digest must match the live codec exactly.
GenerationResult generate(const LMModel& backbone, const LMModel& sr,
                          const Codec& codec, const GenerationRequest& req);

}  // namespace atck
