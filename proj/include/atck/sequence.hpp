// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
//
// Builders that turn (text condition, token hierarchy) into model sequences:
// the backbone's interleaved two-layer stream, the refinement model's causal
// and time-parallel tasks, and the task-mixture sampler.
#pragma once

#include <vector>

#include "atck/common.hpp"
#include "atck/lm.hpp"
#include "atck/rvq.hpp"
#include "atck/tensor.hpp"

namespace atck {

struct TextCondition {
  std::vector<int> lyric;
  double duration_s = 0.0;
};

enum class TaskKind { Backbone, Task0, Task1 };

// One training or inference sequence plus its supervision layout. blocks[i]
// is the vocabulary range the target at position i is drawn from; rows with
// loss_mask 0 carry an inert block.
struct TaskInstance {
  TaskKind kind = TaskKind::Backbone;
  int target_layer = -1;  // Task1 only
  std::vector<PositionInput> inputs;
  std::vector<int> targets;
  std::vector<uint8_t> loss_mask;
  MaskKind mask_kind = MaskKind::Causal;
  std::vector<Range> blocks;

  int length() const { return int(inputs.size()); }
  int loss_positions() const;
};

// [<bos>, <dur_b>, lyric..., <sep>]; the duration bucket is ceil(seconds)
// clamped to [1, max_duration].
std::vector<int> tokenize_text(const TextCondition& tc, const VocabLayout& v);

// Recovers the lyric symbols from a tokenize_text id sequence.
std::vector<int> detokenize_lyric(const std::vector<int>& ids,
                                  const VocabLayout& v);

// Text, then q0/q1 interleaved per frame with per-layer vocab offsets, then
// <eos>. Causal; loss on every acoustic position and the <eos>. Length is
// text_len + 2*frames + 1.
TaskInstance build_backbone_sequence(const TextCondition& tc,
                                     const TokenHierarchy& h,
                                     const VocabLayout& v);

// The acoustic ids of a backbone-format stream, split back into per-layer
// indices. `start` is the first position after the text prefix.
struct AcousticParse {
  std::vector<int> q0, q1;
  bool hit_eos = false;
};
AcousticParse parse_interleaved(const std::vector<int>& ids, size_t start,
                                const VocabLayout& v);

// Text then the q0 stream only; causal next-token prediction with loss on
// exactly `frames` positions.
TaskInstance build_task0(const TextCondition& tc, const TokenHierarchy& h,
                         const VocabLayout& v);

// Text, a <tgt_n> control token, then one continuous position per frame
// carrying the sum of codeword vectors of every layer below n (tagged with
// layer n). Full attention; the model predicts layer n at every frame at
// once. codebooks[i] is the [K, D] codeword table of layer i.
TaskInstance build_task1(const TextCondition& tc, const TokenHierarchy& h,
                         const std::vector<Tensor>& codebooks, int target_layer,
                         const VocabLayout& v);

struct TaskChoice {
  TaskKind kind = TaskKind::Task0;
  int target_layer = -1;
};

// Task0 with probability p0, otherwise Task1 with a target layer uniform over
// [min_layer, depth). min_layer defaults to 2; 1 widens the study range.
TaskChoice sample_task(double p0, int depth, int min_layer, Rng& rng);

}  // namespace atck
