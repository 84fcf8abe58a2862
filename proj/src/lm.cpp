// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#include "atck/lm.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "atck/common.hpp"

namespace atck {

int VocabLayout::dur(int seconds) const {
  check(seconds >= 1 && seconds <= max_duration,
        "vocab: duration bucket out of range");
  return 2 + (seconds - 1);
}

int VocabLayout::symbol(int s) const {
  check(s >= 0 && s < n_symbols, "vocab: symbol out of range");
  return 2 + max_duration + s;
}

int VocabLayout::tgt(int layer) const {
  check(layer >= 0 && layer < depth, "vocab: target layer out of range");
  return text_size() + layer;
}

int VocabLayout::eos() const { return text_size() + depth; }

Range VocabLayout::layer_block(int layer) const {
  check(layer >= 0 && layer < depth, "vocab: layer out of range");
  int start = text_size() + depth + 1 + layer * codebook_size;
  return {start, start + codebook_size};
}

Range VocabLayout::stop_or_layer0_block() const {
  return {eos(), eos() + 1 + codebook_size};
}

int VocabLayout::vocab_size() const {
  return text_size() + depth + 1 + depth * codebook_size;
}

bool VocabLayout::in_layer_block(int id, int layer) const {
  return layer_block(layer).contains(id);
}

int VocabLayout::layer_token_index(int id, int layer) const {
  Range b = layer_block(layer);
  check(b.contains(id), "vocab: id outside layer block");
  return id - b.lo;
}

void LMConfig::validate() const {
  check(n_layers >= 1, "lm config: n_layers must be positive");
  check(d_model >= 2 && n_heads >= 1 && d_model % n_heads == 0,
        "lm config: d_model must divide into heads");
  check(n_kv_heads >= 1 && n_heads % n_kv_heads == 0,
        "lm config: n_heads must be divisible by n_kv_heads");
  check(head_dim() % 2 == 0, "lm config: head dim must be even for rotation");
  check(d_ffn >= 1, "lm config: d_ffn must be positive");
  check(max_seq_len >= 2, "lm config: max_seq_len too small");
  check(rope_base > 1.0, "lm config: rope_base must exceed 1");
  check(cont_dim >= 1, "lm config: cont_dim must be positive");
  check(vocab.n_symbols >= 1 && vocab.max_duration >= 1,
        "lm config: empty text vocabulary");
  check(vocab.depth >= 2, "lm config: need at least two acoustic layers");
  check(vocab.codebook_size >= 2, "lm config: codebook too small");
}

LMConfig lm_config_from(const Config& cfg) {
  LMConfig c;
  c.n_layers = int(cfg.get_int("lm.n_layers"));
  c.d_model = int(cfg.get_int("lm.d_model"));
  c.n_heads = int(cfg.get_int("lm.n_heads"));
  c.n_kv_heads = int(cfg.get_int("lm.n_kv_heads"));
  c.d_ffn = int(cfg.get_int("lm.d_ffn"));
  c.max_seq_len = int(cfg.get_int("lm.max_seq_len"));
  c.rope_base = cfg.get_double("lm.rope_base");
  c.cont_dim = int(cfg.get_int("codec.latent_dim"));
  c.vocab.n_symbols = int(cfg.get_int("corpus.vocab_size"));
  c.vocab.max_duration = int(cfg.get_int("lm.max_duration_s"));
  int depth = int(cfg.get_int("lm.acoustic_depth"));
  c.vocab.depth = depth > 0 ? depth : int(cfg.get_int("codec.depth"));
  c.vocab.codebook_size = int(cfg.get_int("codec.codebook_size"));
  c.validate();
  return c;
}

PositionInput token_input(int id) {
  check(id >= 0, "token_input: negative id");
  PositionInput p;
  p.token_id = id;
  return p;
}

PositionInput cont_input(Tensor v, int layer_tag) {
  check(v.rank() == 1 && v.numel() >= 1, "cont_input: need a rank-1 vector");
  check(layer_tag >= 0, "cont_input: need a layer tag");
  PositionInput p;
  p.cont = std::move(v);
  p.layer_tag = layer_tag;
  return p;
}

LMModel make_lm(const Config& cfg, uint64_t seed) {
  LMModel model;
  model.config = lm_config_from(cfg);
  model.full_config = cfg;
  const LMConfig& c = model.config;
  Rng rng(seed);
  auto add_normal = [&](const std::string& name, std::vector<int> dims) {
    Tensor t = Tensor::zeros(dims);
    fill_normal(t, rng, 0.0, 0.02);
    model.params.add(name, t);
  };
  int d = c.d_model;
  int v = c.vocab.vocab_size();
  add_normal("embed.tok", {v, d});
  add_normal("embed.cont_proj.w", {c.cont_dim, d});
  model.params.add("embed.cont_proj.b", Tensor::zeros({d}));
  add_normal("embed.layer", {c.vocab.depth, d});
  for (int i = 0; i < c.n_layers; ++i) {
    std::string b = "blk" + std::to_string(i);
    model.params.add(b + ".ln1.g", Tensor::full({d}, 1.0f));
    model.params.add(b + ".ln1.b", Tensor::zeros({d}));
    add_normal(b + ".attn.wq", {d, d});
    add_normal(b + ".attn.wk", {d, c.kv_dim()});
    add_normal(b + ".attn.wv", {d, c.kv_dim()});
    add_normal(b + ".attn.wo", {d, d});
    model.params.add(b + ".ln2.g", Tensor::full({d}, 1.0f));
    model.params.add(b + ".ln2.b", Tensor::zeros({d}));
    add_normal(b + ".mlp.gate", {d, c.d_ffn});
    add_normal(b + ".mlp.up", {d, c.d_ffn});
    add_normal(b + ".mlp.down", {c.d_ffn, d});
  }
  model.params.add("ln_f.g", Tensor::full({d}, 1.0f));
  model.params.add("ln_f.b", Tensor::zeros({d}));
  add_normal("out.w", {d, v});
  return model;
}

NodeId lm_forward(Tape<float>& tape, const LMModel& model, ParamBinding* binding,
                  const std::vector<PositionInput>& inputs,
                  const AttentionMask& mask) {
  const LMConfig& c = model.config;
  int len = int(inputs.size());
  check(len >= 1, "lm_forward: empty input");
  check(len <= c.max_seq_len, "lm_forward: sequence exceeds max_seq_len");
  check(mask.length == len, "lm_forward: mask length mismatch");
  auto P = [&](const std::string& name) {
    if (binding != nullptr)
      return binding->leaf(tape, const_cast<ParamStore&>(model.params), name);
    return tape.constant(model.params.at(name).value);
  };

  int d = c.d_model;
  std::vector<int> tok_ids(size_t(len), 0);
  std::vector<int> tag_ids(size_t(len), 0);
  Tensor tok_mask = Tensor::zeros({len, d});
  Tensor tag_mask = Tensor::zeros({len, d});
  Tensor cont_mask = Tensor::zeros({len, d});
  Tensor cont_mat = Tensor::zeros({len, c.cont_dim});
  bool any_cont = false;
  bool any_tag = false;
  for (int t = 0; t < len; ++t) {
    const PositionInput& p = inputs[size_t(t)];
    if (p.is_token()) {
      check(p.cont.data.empty(), "lm_forward: position has token and vector");
      check(p.token_id < c.vocab.vocab_size(), "lm_forward: unknown token id");
      tok_ids[size_t(t)] = p.token_id;
      for (int j = 0; j < d; ++j)
        tok_mask.data[size_t(t) * size_t(d) + size_t(j)] = 1.0f;
    } else {
      check(p.cont.rank() == 1 && p.cont.numel() == c.cont_dim,
            "lm_forward: continuous input dim mismatch");
      any_cont = true;
      for (int j = 0; j < c.cont_dim; ++j)
        cont_mat.data[size_t(t) * size_t(c.cont_dim) + size_t(j)] =
            p.cont.data[size_t(j)];
      for (int j = 0; j < d; ++j)
        cont_mask.data[size_t(t) * size_t(d) + size_t(j)] = 1.0f;
    }
    if (p.layer_tag >= 0) {
      check(p.layer_tag < c.vocab.depth, "lm_forward: layer tag out of range");
      any_tag = true;
      tag_ids[size_t(t)] = p.layer_tag;
      for (int j = 0; j < d; ++j)
        tag_mask.data[size_t(t) * size_t(d) + size_t(j)] = 1.0f;
    }
  }

  NodeId x = tape.mul(tape.embedding(P("embed.tok"), tok_ids),
                      tape.constant(tok_mask));
  if (any_cont) {
    NodeId proj = tape.matmul(tape.constant(cont_mat), P("embed.cont_proj.w"));
    proj = tape.add(proj, P("embed.cont_proj.b"));
    x = tape.add(x, tape.mul(proj, tape.constant(cont_mask)));
  }
  if (any_tag)
    x = tape.add(x, tape.mul(tape.embedding(P("embed.layer"), tag_ids),
                             tape.constant(tag_mask)));

  for (int i = 0; i < c.n_layers; ++i) {
    std::string b = "blk" + std::to_string(i);
    NodeId h = tape.layer_norm(x, P(b + ".ln1.g"), P(b + ".ln1.b"));
    NodeId q = tape.rope(tape.matmul(h, P(b + ".attn.wq")), c.n_heads,
                         c.rope_base);
    NodeId k = tape.rope(tape.matmul(h, P(b + ".attn.wk")), c.n_kv_heads,
                         c.rope_base);
    NodeId v = tape.matmul(h, P(b + ".attn.wv"));
    NodeId a = tape.attention(q, k, v, c.n_heads, c.n_kv_heads, mask);
    x = tape.add(x, tape.matmul(a, P(b + ".attn.wo")));
    NodeId m = tape.layer_norm(x, P(b + ".ln2.g"), P(b + ".ln2.b"));
    NodeId gate = tape.silu(tape.matmul(m, P(b + ".mlp.gate")));
    NodeId up = tape.matmul(m, P(b + ".mlp.up"));
    x = tape.add(x, tape.matmul(tape.mul(gate, up), P(b + ".mlp.down")));
  }
  NodeId f = tape.layer_norm(x, P("ln_f.g"), P("ln_f.b"));
  return tape.matmul(f, P("out.w"));
}

int sample_next(const Tensor& logits, int row, Range block, double temperature,
                int top_k, Rng& rng) {
  check(logits.rank() == 2, "sample_next: logits must be rank 2");
  check(row >= 0 && row < logits.rows(), "sample_next: row out of range");
  check(block.lo >= 0 && block.hi <= logits.cols() && block.size() >= 1,
        "sample_next: block outside logits");
  check(top_k >= 1, "sample_next: top_k must be positive");
  check(temperature >= 0.0, "sample_next: negative temperature");
  const float* p = logits.data.data() + size_t(row) * size_t(logits.cols());
  for (int id = block.lo; id < block.hi; ++id)
    check(std::isfinite(p[size_t(id)]), "sample_next: non-finite logit");

  auto better = [&](int a, int b) {
    if (p[size_t(a)] != p[size_t(b)]) return p[size_t(a)] > p[size_t(b)];
    return a < b;
  };
  if (temperature == 0.0 || top_k == 1) {
    int best = block.lo;
    for (int id = block.lo + 1; id < block.hi; ++id)
      if (better(id, best)) best = id;
    return best;
  }

  std::vector<int> ids;
  ids.reserve(size_t(block.size()));
  for (int id = block.lo; id < block.hi; ++id) ids.push_back(id);
  int k = std::min(top_k, block.size());
  std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), better);
  ids.resize(size_t(k));

  double maxv = p[size_t(ids[0])];
  std::vector<double> probs(size_t(k), 0.0);
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    probs[size_t(i)] = std::exp((double(p[size_t(ids[size_t(i)])]) - maxv) /
                                temperature);
    total += probs[size_t(i)];
  }
  double u = rng.uniform() * total;
  double acc = 0.0;
  for (int i = 0; i < k; ++i) {
    acc += probs[size_t(i)];
    if (u < acc) return ids[size_t(i)];
  }
  return ids[size_t(k - 1)];
}

Checkpoint lm_to_checkpoint(const LMModel& model) {
  Checkpoint ckpt;
  ckpt.config_text = model.full_config.canonical_text();
  ckpt.config_digest = model.full_config.digest();
  ckpt.step = uint64_t(model.step);
  for (const auto& e : model.params.entries) ckpt.add(e.name, e.value);
  return ckpt;
}

LMModel lm_from_checkpoint(const Checkpoint& ckpt) {
  Config cfg;
  cfg.apply_text(ckpt.config_text);
  check(cfg.digest() == ckpt.config_digest,
        "lm_from_checkpoint: config text does not match digest");
  LMModel model = make_lm(cfg, 0);
  model.step = int64_t(ckpt.step);
  for (auto& e : model.params.entries) {
    const Tensor& t = ckpt.require(e.name);
    check(t.dims == e.value.dims,
          "lm_from_checkpoint: shape mismatch for " + e.name);
    e.value = t;
  }
  return model;
}

}  // namespace atck
