// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "atck/checkpoint.hpp"
#include "atck/config.hpp"
#include "atck/optim.hpp"
#include "atck/tape.hpp"

namespace atck {

// Unified token id space: [text][control][layer 0]...[layer N-1].
// The text block holds bos, sep, duration buckets and lyric symbols. The
// control block holds one target-layer token per acoustic layer plus eos;
// eos sits last so that {eos} followed by the layer-0 block is one
// contiguous range, which is what next-token prediction on the first
// acoustic layer needs (a step either emits a layer-0 token or stops).
struct VocabLayout {
  int n_symbols = 0;
  int max_duration = 0;  // duration buckets 1..max_duration seconds
  int depth = 0;         // acoustic layers
  int codebook_size = 0;

  int bos() const { return 0; }
  int sep() const { return 1; }
  int dur(int seconds) const;
  int symbol(int s) const;
  int tgt(int layer) const;
  int eos() const;

  int text_size() const { return 2 + max_duration + n_symbols; }
  Range text_block() const { return {0, text_size()}; }
  Range control_block() const { return {text_size(), text_size() + depth + 1}; }
  Range layer_block(int layer) const;
  // {eos} plus layer 0: the legal outcomes of a layer-0 prediction step.
  Range stop_or_layer0_block() const;
  int vocab_size() const;

  // inverse lookups
  bool in_layer_block(int id, int layer) const;
  int layer_token_index(int id, int layer) const;  // id -> codebook index
};

struct LMConfig {
  int n_layers = 4;
  int d_model = 128;
  int n_heads = 4;
  int n_kv_heads = 4;
  int d_ffn = 352;
  int max_seq_len = 2048;
  double rope_base = 10000.0;
  int cont_dim = 64;  // width of continuous (latent sum) inputs
  VocabLayout vocab;

  int head_dim() const { return d_model / n_heads; }
  int kv_dim() const { return head_dim() * n_kv_heads; }
  void validate() const;
};

// Resolves the model shape from the flat config; lm.acoustic_depth = 0 means
// "as many acoustic layers as the codec has".
LMConfig lm_config_from(const Config& cfg);

// One sequence position: either a token id or a continuous vector with a
// layer tag (which adds a learned per-layer embedding).
struct PositionInput {
  int token_id = -1;
  Tensor cont;
  int layer_tag = -1;

  bool is_token() const { return token_id >= 0; }
};

PositionInput token_input(int id);
PositionInput cont_input(Tensor v, int layer_tag);

struct LMModel {
  LMConfig config;
  Config full_config;
  ParamStore params;
  int64_t step = 0;
};

LMModel make_lm(const Config& cfg, uint64_t seed);

// Pre-norm transformer with rotary positions and grouped key-value heads.
// Returns the logits node [length, vocab]. With a binding the parameters are
// gradient-tracked; without one they are constants.
NodeId lm_forward(Tape<float>& tape, const LMModel& model, ParamBinding* binding,
                  const std::vector<PositionInput>& inputs,
                  const AttentionMask& mask);

// Samples a token id from one logits row, restricted to the given block.
// temperature 0 picks the argmax (ties toward the lowest id); otherwise
// softmax over the top_k highest logits within the block.
int sample_next(const Tensor& logits, int row, Range block, double temperature,
                int top_k, Rng& rng);

Checkpoint lm_to_checkpoint(const LMModel& model);
LMModel lm_from_checkpoint(const Checkpoint& ckpt);

}  // namespace atck
