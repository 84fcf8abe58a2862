// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#include "atck/sequence.hpp"

#include <cmath>

namespace atck {

namespace {

constexpr Range kInertBlock{0, 1};

void check_hierarchy(const TokenHierarchy& h, const VocabLayout& v,
                     int need_depth) {
  check(h.length >= 1, "sequence: empty hierarchy");
  check(h.depth >= need_depth, "sequence: hierarchy depth too small");
  check(h.codebook_size == v.codebook_size,
        "sequence: hierarchy codebook size does not match the vocabulary");
}

}  // namespace

int TaskInstance::loss_positions() const {
  int n = 0;
  for (uint8_t m : loss_mask) n += m ? 1 : 0;
  return n;
}

std::vector<int> tokenize_text(const TextCondition& tc, const VocabLayout& v) {
  check(tc.duration_s > 0.0, "tokenize_text: duration must be positive");
  int bucket = int(std::ceil(tc.duration_s));
  bucket = std::max(1, std::min(bucket, v.max_duration));
  std::vector<int> ids;
  ids.reserve(tc.lyric.size() + 3);
  ids.push_back(v.bos());
  ids.push_back(v.dur(bucket));
  for (int s : tc.lyric) {
    check(s >= 0 && s < v.n_symbols, "tokenize_text: unknown symbol");
    ids.push_back(v.symbol(s));
  }
  ids.push_back(v.sep());
  return ids;
}

std::vector<int> detokenize_lyric(const std::vector<int>& ids,
                                  const VocabLayout& v) {
  check(ids.size() >= 3 && ids.front() == v.bos() && ids.back() == v.sep(),
        "detokenize_lyric: not a text sequence");
  check(ids[1] >= v.dur(1) && ids[1] <= v.dur(v.max_duration),
        "detokenize_lyric: missing duration token");
  std::vector<int> lyric;
  for (size_t i = 2; i + 1 < ids.size(); ++i) {
    int id = ids[i];
    check(id >= v.symbol(0) && id < v.symbol(0) + v.n_symbols,
          "detokenize_lyric: not a lyric symbol");
    lyric.push_back(id - v.symbol(0));
  }
  return lyric;
}

TaskInstance build_backbone_sequence(const TextCondition& tc,
                                     const TokenHierarchy& h,
                                     const VocabLayout& v) {
  check_hierarchy(h, v, 2);
  std::vector<int> ids = tokenize_text(tc, v);
  size_t text_len = ids.size();
  ids.reserve(text_len + 2 * size_t(h.length) + 1);
  for (int t = 0; t < h.length; ++t) {
    ids.push_back(v.layer_block(0).lo + h.at(0, t));
    ids.push_back(v.layer_block(1).lo + h.at(1, t));
  }
  ids.push_back(v.eos());

  TaskInstance inst;
  inst.kind = TaskKind::Backbone;
  inst.mask_kind = MaskKind::Causal;
  size_t n = ids.size();
  inst.targets.assign(n, 0);
  inst.loss_mask.assign(n, 0);
  inst.blocks.assign(n, kInertBlock);
  for (size_t i = 0; i < n; ++i) {
    inst.inputs.push_back(token_input(ids[i]));
    if (i + 1 < n && i + 1 >= text_len) {
      // target is the next id; q0 slots may also stop, q1 slots may not
      inst.targets[i] = ids[i + 1];
      inst.loss_mask[i] = 1;
      bool next_is_q1 = (i + 1 - text_len) % 2 == 1 && ids[i + 1] != v.eos();
      inst.blocks[i] =
          next_is_q1 ? v.layer_block(1) : v.stop_or_layer0_block();
    }
  }
  return inst;
}

AcousticParse parse_interleaved(const std::vector<int>& ids, size_t start,
                                const VocabLayout& v) {
  AcousticParse out;
  size_t i = start;
  while (i < ids.size()) {
    int id = ids[i];
    if (id == v.eos()) {
      out.hit_eos = true;
      break;
    }
    check(v.in_layer_block(id, 0), "parse_interleaved: expected a q0 token");
    check(i + 1 < ids.size(), "parse_interleaved: q0 without its q1");
    check(v.in_layer_block(ids[i + 1], 1),
          "parse_interleaved: expected a q1 token");
    out.q0.push_back(v.layer_token_index(id, 0));
    out.q1.push_back(v.layer_token_index(ids[i + 1], 1));
    i += 2;
  }
  return out;
}

TaskInstance build_task0(const TextCondition& tc, const TokenHierarchy& h,
                         const VocabLayout& v) {
  check_hierarchy(h, v, 1);
  std::vector<int> ids = tokenize_text(tc, v);
  size_t text_len = ids.size();
  for (int t = 0; t < h.length; ++t)
    ids.push_back(v.layer_block(0).lo + h.at(0, t));

  TaskInstance inst;
  inst.kind = TaskKind::Task0;
  inst.mask_kind = MaskKind::Causal;
  size_t n = ids.size();
  inst.targets.assign(n, 0);
  inst.loss_mask.assign(n, 0);
  inst.blocks.assign(n, kInertBlock);
  for (size_t i = 0; i < n; ++i) {
    inst.inputs.push_back(token_input(ids[i]));
    if (i + 1 < n && i + 1 >= text_len) {
      inst.targets[i] = ids[i + 1];
      inst.loss_mask[i] = 1;
      inst.blocks[i] = v.layer_block(0);
    }
  }
  return inst;
}

TaskInstance build_task1(const TextCondition& tc, const TokenHierarchy& h,
                         const std::vector<Tensor>& codebooks, int target_layer,
                         const VocabLayout& v) {
  check(target_layer >= 1 && target_layer < v.depth,
        "build_task1: target layer out of range");
  check_hierarchy(h, v, target_layer + 1);
  check(int(codebooks.size()) >= target_layer,
        "build_task1: not enough codebooks for the conditioning sum");
  int dim = codebooks.empty() ? 0 : codebooks[0].cols();
  for (int i = 0; i < target_layer; ++i) {
    check(codebooks[size_t(i)].rows() == v.codebook_size &&
              codebooks[size_t(i)].cols() == dim,
          "build_task1: codebook shape mismatch");
  }

  TaskInstance inst;
  inst.kind = TaskKind::Task1;
  inst.target_layer = target_layer;
  inst.mask_kind = MaskKind::Full;
  std::vector<int> text = tokenize_text(tc, v);
  for (int id : text) inst.inputs.push_back(token_input(id));
  inst.inputs.push_back(token_input(v.tgt(target_layer)));
  size_t prefix = inst.inputs.size();
  size_t n = prefix + size_t(h.length);
  inst.targets.assign(n, 0);
  inst.loss_mask.assign(n, 0);
  inst.blocks.assign(n, kInertBlock);
  for (int t = 0; t < h.length; ++t) {
    Tensor sum = Tensor::zeros({dim});
    for (int i = 0; i < target_layer; ++i) {
      const Tensor& cb = codebooks[size_t(i)];
      const float* row = cb.row(h.at(i, t));
      for (int j = 0; j < dim; ++j) sum.data[size_t(j)] += row[j];
    }
    inst.inputs.push_back(cont_input(std::move(sum), target_layer));
    size_t pos = prefix + size_t(t);
    inst.targets[pos] = v.layer_block(target_layer).lo + h.at(target_layer, t);
    inst.loss_mask[pos] = 1;
    inst.blocks[pos] = v.layer_block(target_layer);
  }
  return inst;
}

TaskChoice sample_task(double p0, int depth, int min_layer, Rng& rng) {
  check(p0 >= 0.0 && p0 <= 1.0, "sample_task: p0 must lie in [0, 1]");
  check(min_layer >= 1 && min_layer < depth,
        "sample_task: min_layer out of range");
  if (rng.uniform() < p0) return {TaskKind::Task0, -1};
  int layer = min_layer + int(rng.uniform_int(int64_t(depth - min_layer)));
  return {TaskKind::Task1, layer};
}

}  // namespace atck
