// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
//
// Training loops for the backbone and the refinement model, the hybrid
// attention task mixture, backbone-initialized transfer, and convergence
// comparison between runs.
#pragma once

#include <string>
#include <vector>

#include "atck/codec.hpp"
#include "atck/lm.hpp"
#include "atck/sequence.hpp"
#include "atck/signal.hpp"

namespace atck {

// One corpus item with its frozen token hierarchy (truncated to the model's
// acoustic depth) and text condition. Tokenized once, reused every step.
struct TokenizedItem {
  int id = 0;
  TextCondition text;
  TokenHierarchy tokens;
};

std::vector<TokenizedItem> tokenize_corpus(const Codec& codec,
                                           const std::vector<CorpusItem>& items,
                                           int depth);

// Reproducible 10% validation split keyed on item id.
void split_train_val(const std::vector<TokenizedItem>& all,
                     std::vector<int>& train_idx, std::vector<int>& val_idx);

// (step, split, task) -> loss rows, in training order. Serialized as CSV.
struct RunRow {
  int step = 0;
  std::string split;
  std::string task;
  double loss = 0.0;
};

struct RunReport {
  std::vector<RunRow> rows;

  void add(int step, const std::string& split, const std::string& task,
           double loss);
  std::string to_csv() const;
  static RunReport from_csv(const std::string& text);
  void save(const std::string& path) const;
  static RunReport load(const std::string& path);

  // Latest validation loss recorded for a task; errors if none exists.
  double last_val(const std::string& task) const;
  bool has_val(const std::string& task) const;
};

// First step whose validation row for `task` is at or below the threshold;
// +infinity when the run never gets there.
double steps_to_threshold(const RunReport& r, const std::string& task,
                          double threshold);

struct ConvergenceComparison {
  double steps_a = 0.0;
  double steps_b = 0.0;
  double ratio = 0.0;  // steps_a / steps_b
};
ConvergenceComparison compare_convergence(const RunReport& a,
                                          const RunReport& b,
                                          const std::string& task,
                                          double threshold);

// Next-token training over interleaved two-layer sequences. Deterministic in
// (corpus, config, seed). Reports train rows per step and validation rows
// ("backbone" plus "q0"/"q1" breakdowns) at the eval cadence.
LMModel train_backbone(const std::vector<CorpusItem>& corpus,
                       const Codec& codec, const Config& cfg, uint64_t seed,
                       RunReport* report);

// Hybrid-attention mixture training: each batch instance is Task0 (causal)
// with probability p0 and otherwise Task1 (full attention) on a layer drawn
// uniformly from [task1_min_layer, depth). Validation reports "task1" always
// and "task0" only when p0 > 0. Pass a backbone to transfer-initialize.
LMModel train_sr(const std::vector<CorpusItem>& corpus, const Codec& codec,
                 const Config& cfg, uint64_t seed, const LMModel* backbone,
                 RunReport* report);

// A fresh model whose trunk, final norm, and the embedding/output rows of the
// text block, <eos>, and acoustic layers 0 and 1 are copied bit-exactly from
// the backbone; everything else (layer >= 2 blocks, layer-control tokens,
// continuous projection, layer tags) keeps its fresh random initialization.
LMModel init_sr_from_backbone(const LMModel& backbone, const Config& cfg,
                              uint64_t seed);

}  // namespace atck
