// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#include "atck/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "atck/optim.hpp"

namespace atck {

namespace {

constexpr uint64_t kSplitSalt = 0x5EED;
constexpr uint64_t kInitSalt = 0xA11CE;
constexpr uint64_t kLoopSalt = 0x10075;

struct LoopConfig {
  int batch;
  int steps;
  int warmup;
  int eval_every;
  int clip_frames;
  double lr;
  double p0;
  int min_layer;
};

LoopConfig loop_config_from(const Config& cfg) {
  LoopConfig lc;
  lc.batch = int(cfg.get_int("train.batch"));
  lc.steps = int(cfg.get_int("train.steps"));
  lc.warmup = int(cfg.get_int("train.warmup"));
  lc.eval_every = int(cfg.get_int("train.eval_every"));
  lc.clip_frames = int(cfg.get_int("train.clip_frames"));
  lc.lr = cfg.get_double("train.lr");
  lc.p0 = cfg.get_double("train.p0");
  lc.min_layer = int(cfg.get_int("train.task1_min_layer"));
  check(lc.batch >= 1, "trainer: batch must be at least 1");
  check(lc.steps >= 1, "trainer: steps must be at least 1");
  check(lc.warmup <= lc.steps, "trainer: warmup exceeds steps");
  check(lc.eval_every >= 1, "trainer: eval cadence must be positive");
  check(lc.clip_frames >= 1, "trainer: clip length must be positive");
  return lc;
}

TokenHierarchy clip_front(const TokenHierarchy& h, int frames) {
  if (h.length <= frames) return h;
  TokenHierarchy out = make_hierarchy(h.depth, frames, h.codebook_size);
  for (int l = 0; l < h.depth; ++l)
    for (int t = 0; t < frames; ++t) out.set(l, t, h.at(l, t));
  return out;
}

TokenHierarchy clip_window(const TokenHierarchy& h, int frames, int start) {
  if (h.length <= frames) return h;
  TokenHierarchy out = make_hierarchy(h.depth, frames, h.codebook_size);
  for (int l = 0; l < h.depth; ++l)
    for (int t = 0; t < frames; ++t) out.set(l, t, h.at(l, start + t));
  return out;
}

// Backbone instance; a truncated item keeps its text but drops the <eos>
// supervision so the model is not taught to stop early.
TaskInstance backbone_instance(const TokenizedItem& item, int clip,
                               const VocabLayout& v) {
  bool truncated = item.tokens.length > clip;
  TaskInstance inst =
      build_backbone_sequence(item.text, clip_front(item.tokens, clip), v);
  if (truncated) inst.loss_mask[inst.loss_mask.size() - 2] = 0;
  return inst;
}

double run_instance(LMModel& model, const TaskInstance& inst, double scale,
                    bool train) {
  Tape<float> tape;
  ParamBinding binding;
  AttentionMask mask = build_mask(inst.mask_kind, inst.length(), {});
  NodeId logits =
      lm_forward(tape, model, train ? &binding : nullptr, inst.inputs, mask);
  NodeId loss =
      tape.cross_entropy(logits, inst.targets, inst.loss_mask, inst.blocks);
  if (train) {
    tape.backward(loss);
    binding.flush_grads(tape, model.params, scale);
  }
  return double(tape.val(loss).data[0]);
}

// Mean loss of an instance with supervision restricted by `keep`.
double masked_loss(const LMModel& model, TaskInstance inst,
                   const std::vector<uint8_t>& keep) {
  for (size_t i = 0; i < inst.loss_mask.size(); ++i)
    if (!keep[i]) inst.loss_mask[i] = 0;
  if (inst.loss_positions() == 0) return 0.0;
  return run_instance(const_cast<LMModel&>(model), inst, 0.0, false);
}

std::vector<Tensor> codeword_tables(const Codec& codec, int depth) {
  std::vector<Tensor> books;
  for (int i = 0; i < depth; ++i)
    books.push_back(codec.books[size_t(i)].codewords);
  return books;
}

void copy_rows(Tensor& dst, const Tensor& src, int lo, int hi) {
  std::memcpy(dst.row(lo), src.row(lo),
              size_t(hi - lo) * size_t(dst.cols()) * sizeof(float));
}

void copy_cols(Tensor& dst, const Tensor& src, int lo, int hi) {
  for (int r = 0; r < dst.rows(); ++r)
    std::memcpy(dst.row(r) + lo, src.row(r) + lo,
                size_t(hi - lo) * sizeof(float));
}

// Generation later refuses to pair a model with a codec other than the one
// it was trained against; the stamp is what makes that check possible.
void stamp_codec_digest(LMModel& model, const Codec& codec) {
  model.full_config.set(
      "train.codec_digest",
      digest_hex(checkpoint_digest(codec_to_checkpoint(codec))));
}

}  // namespace

std::vector<TokenizedItem> tokenize_corpus(const Codec& codec,
                                           const std::vector<CorpusItem>& items,
                                           int depth) {
  check(depth >= 2 && depth <= codec.config.depth,
        "tokenize_corpus: depth must lie in [2, codec depth]");
  std::vector<TokenizedItem> out;
  out.reserve(items.size());
  for (const CorpusItem& item : items) {
    TokenHierarchy full = codec_encode_tokens(codec, item.waveform);
    TokenHierarchy kept = make_hierarchy(depth, full.length, full.codebook_size);
    for (int l = 0; l < depth; ++l)
      for (int t = 0; t < full.length; ++t) kept.set(l, t, full.at(l, t));
    out.push_back({item.id, {item.lyric, item.duration_s}, std::move(kept)});
  }
  return out;
}

void split_train_val(const std::vector<TokenizedItem>& all,
                     std::vector<int>& train_idx, std::vector<int>& val_idx) {
  train_idx.clear();
  val_idx.clear();
  for (size_t i = 0; i < all.size(); ++i) {
    if (Rng::mix(uint64_t(all[i].id), kSplitSalt) % 10 == 0)
      val_idx.push_back(int(i));
    else
      train_idx.push_back(int(i));
  }
  check(!train_idx.empty() && !val_idx.empty(),
        "split_train_val: corpus too small for a validation split");
}

void RunReport::add(int step, const std::string& split, const std::string& task,
                    double loss) {
  rows.push_back({step, split, task, loss});
}

std::string RunReport::to_csv() const {
  std::ostringstream out;
  out << "step,split,task,loss\n";
  char buf[64];
  for (const RunRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.loss);
    out << r.step << ',' << r.split << ',' << r.task << ',' << buf << '\n';
  }
  return out.str();
}

RunReport RunReport::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  check(bool(std::getline(in, line)), "run report: empty csv");
  check(line == "step,split,task,loss", "run report: bad csv header");
  RunReport rep;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    RunRow row;
    std::string step_s, loss_s;
    check(bool(std::getline(ls, step_s, ',')) &&
              bool(std::getline(ls, row.split, ',')) &&
              bool(std::getline(ls, row.task, ',')) &&
              bool(std::getline(ls, loss_s)),
          "run report: bad csv row");
    row.step = std::stoi(step_s);
    row.loss = std::stod(loss_s);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

void RunReport::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  check(bool(out), "run report: cannot open '" + path + "' for writing");
  out << to_csv();
  check(bool(out), "run report: write failed for '" + path + "'");
}

RunReport RunReport::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(bool(in), "run report: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_csv(buf.str());
}

bool RunReport::has_val(const std::string& task) const {
  for (const RunRow& r : rows)
    if (r.split == "val" && r.task == task) return true;
  return false;
}

double RunReport::last_val(const std::string& task) const {
  const RunRow* found = nullptr;
  for (const RunRow& r : rows)
    if (r.split == "val" && r.task == task) found = &r;
  check(found != nullptr, "run report: no validation rows for task '" + task +
                              "'");
  return found->loss;
}

double steps_to_threshold(const RunReport& r, const std::string& task,
                          double threshold) {
  check(r.has_val(task),
        "steps_to_threshold: no validation rows for task '" + task + "'");
  for (const RunRow& row : r.rows)
    if (row.split == "val" && row.task == task && row.loss <= threshold)
      return double(row.step);
  return std::numeric_limits<double>::infinity();
}

ConvergenceComparison compare_convergence(const RunReport& a,
                                          const RunReport& b,
                                          const std::string& task,
                                          double threshold) {
  ConvergenceComparison out;
  out.steps_a = steps_to_threshold(a, task, threshold);
  out.steps_b = steps_to_threshold(b, task, threshold);
  out.ratio = out.steps_a / out.steps_b;
  return out;
}

LMModel train_backbone(const std::vector<CorpusItem>& corpus,
                       const Codec& codec, const Config& cfg, uint64_t seed,
                       RunReport* report) {
  LoopConfig lc = loop_config_from(cfg);
  LMModel model = make_lm(cfg, Rng::mix(seed, kInitSalt));
  const VocabLayout& v = model.config.vocab;
  std::vector<TokenizedItem> items = tokenize_corpus(codec, corpus, v.depth);
  std::vector<int> train_idx, val_idx;
  split_train_val(items, train_idx, val_idx);

  AdamW opt;
  opt.cfg.lr = lc.lr;
  opt.cfg.warmup = lc.warmup;
  Rng rng(Rng::mix(seed, kLoopSalt));

  auto evaluate = [&](int step) {
    double total = 0.0, q0 = 0.0, q1 = 0.0;
    for (int idx : val_idx) {
      TaskInstance inst = backbone_instance(items[size_t(idx)],
                                            lc.clip_frames, v);
      total += run_instance(model, inst, 0.0, false);
      std::vector<uint8_t> is_q0(inst.loss_mask.size(), 0);
      std::vector<uint8_t> is_q1(inst.loss_mask.size(), 0);
      for (size_t i = 0; i < inst.loss_mask.size(); ++i) {
        if (!inst.loss_mask[i]) continue;
        bool stop_block = inst.blocks[i].lo == v.stop_or_layer0_block().lo;
        is_q0[i] = stop_block ? 1 : 0;
        is_q1[i] = stop_block ? 0 : 1;
      }
      q0 += masked_loss(model, inst, is_q0);
      q1 += masked_loss(model, inst, is_q1);
    }
    double n = double(val_idx.size());
    if (report != nullptr) {
      report->add(step, "val", "backbone", total / n);
      report->add(step, "val", "q0", q0 / n);
      report->add(step, "val", "q1", q1 / n);
    }
  };

  for (int s = 1; s <= lc.steps; ++s) {
    model.params.zero_grads();
    double mean = 0.0;
    for (int b = 0; b < lc.batch; ++b) {
      int idx = train_idx[size_t(rng.uniform_int(int64_t(train_idx.size())))];
      TaskInstance inst =
          backbone_instance(items[size_t(idx)], lc.clip_frames, v);
      mean += run_instance(model, inst, 1.0 / lc.batch, true) / lc.batch;
    }
    check(std::isfinite(mean),
          "train_backbone: diverged at step " + std::to_string(s));
    opt.step(model.params);
    model.step = s;
    if (report != nullptr) report->add(s, "train", "backbone", mean);
    if (s % lc.eval_every == 0 || s == lc.steps) evaluate(s);
  }
  stamp_codec_digest(model, codec);
  return model;
}

LMModel train_sr(const std::vector<CorpusItem>& corpus, const Codec& codec,
                 const Config& cfg, uint64_t seed, const LMModel* backbone,
                 RunReport* report) {
  LoopConfig lc = loop_config_from(cfg);
  check(lc.p0 >= 0.0 && lc.p0 <= 1.0, "train_sr: p0 must lie in [0, 1]");
  LMModel model =
      backbone != nullptr
          ? init_sr_from_backbone(*backbone, cfg, Rng::mix(seed, kInitSalt))
          : make_lm(cfg, Rng::mix(seed, kInitSalt));
  const VocabLayout& v = model.config.vocab;
  check(lc.min_layer >= 1 && lc.min_layer < v.depth,
        "train_sr: task1_min_layer out of range");
  std::vector<TokenizedItem> items = tokenize_corpus(codec, corpus, v.depth);
  std::vector<int> train_idx, val_idx;
  split_train_val(items, train_idx, val_idx);
  std::vector<Tensor> books = codeword_tables(codec, v.depth);

  AdamW opt;
  opt.cfg.lr = lc.lr;
  opt.cfg.warmup = lc.warmup;
  Rng rng(Rng::mix(seed, kLoopSalt));

  auto evaluate = [&](int step) {
    if (report == nullptr) return;
    if (lc.p0 > 0.0) {
      double t0 = 0.0;
      for (int idx : val_idx) {
        const TokenizedItem& item = items[size_t(idx)];
        t0 += run_instance(model,
                           build_task0(item.text,
                                       clip_front(item.tokens, lc.clip_frames),
                                       v),
                           0.0, false);
      }
      report->add(step, "val", "task0", t0 / double(val_idx.size()));
    }
    double t1 = 0.0;
    int n1 = 0;
    for (int idx : val_idx) {
      const TokenizedItem& item = items[size_t(idx)];
      TokenHierarchy h = clip_front(item.tokens, lc.clip_frames);
      for (int layer = lc.min_layer; layer < v.depth; ++layer) {
        t1 += run_instance(model, build_task1(item.text, h, books, layer, v),
                           0.0, false);
        ++n1;
      }
    }
    report->add(step, "val", "task1", t1 / double(n1));
  };

  for (int s = 1; s <= lc.steps; ++s) {
    model.params.zero_grads();
    double sum0 = 0.0, sum1 = 0.0;
    int n0 = 0, n1 = 0;
    for (int b = 0; b < lc.batch; ++b) {
      int idx = train_idx[size_t(rng.uniform_int(int64_t(train_idx.size())))];
      const TokenizedItem& item = items[size_t(idx)];
      TaskChoice choice = sample_task(lc.p0, v.depth, lc.min_layer, rng);
      double loss;
      if (choice.kind == TaskKind::Task0) {
        loss = run_instance(
            model,
            build_task0(item.text, clip_front(item.tokens, lc.clip_frames), v),
            1.0 / lc.batch, true);
        sum0 += loss;
        ++n0;
      } else {
        int max_start = item.tokens.length - lc.clip_frames;
        int start =
            max_start > 0 ? int(rng.uniform_int(int64_t(max_start) + 1)) : 0;
        TokenHierarchy h = clip_window(item.tokens, lc.clip_frames, start);
        loss = run_instance(
            model, build_task1(item.text, h, books, choice.target_layer, v),
            1.0 / lc.batch, true);
        sum1 += loss;
        ++n1;
      }
      check(std::isfinite(loss),
            "train_sr: diverged at step " + std::to_string(s));
    }
    opt.step(model.params);
    model.step = s;
    if (report != nullptr) {
      if (n0 > 0) report->add(s, "train", "task0", sum0 / n0);
      if (n1 > 0) report->add(s, "train", "task1", sum1 / n1);
    }
    if (s % lc.eval_every == 0 || s == lc.steps) evaluate(s);
  }
  stamp_codec_digest(model, codec);
  return model;
}

LMModel init_sr_from_backbone(const LMModel& backbone, const Config& cfg,
                              uint64_t seed) {
  LMModel model = make_lm(cfg, seed);
  const LMConfig& a = backbone.config;
  const LMConfig& b = model.config;
  check(a.n_layers == b.n_layers && a.d_model == b.d_model &&
            a.n_heads == b.n_heads && a.n_kv_heads == b.n_kv_heads &&
            a.d_ffn == b.d_ffn && a.rope_base == b.rope_base,
        "init_sr_from_backbone: trunk shape mismatch");
  check(a.vocab.n_symbols == b.vocab.n_symbols &&
            a.vocab.max_duration == b.vocab.max_duration &&
            a.vocab.depth == b.vocab.depth &&
            a.vocab.codebook_size == b.vocab.codebook_size &&
            a.cont_dim == b.cont_dim,
        "init_sr_from_backbone: vocab layout incompatibility");

  const VocabLayout& v = b.vocab;
  for (auto& entry : model.params.entries) {
    const Tensor& src = backbone.params.at(entry.name).value;
    if (entry.name.rfind("blk", 0) == 0 || entry.name.rfind("ln_f.", 0) == 0) {
      entry.value = src;
    } else if (entry.name == "embed.tok") {
      copy_rows(entry.value, src, 0, v.text_size());
      copy_rows(entry.value, src, v.eos(), v.layer_block(1).hi);
    } else if (entry.name == "out.w") {
      copy_cols(entry.value, src, 0, v.text_size());
      copy_cols(entry.value, src, v.eos(), v.layer_block(1).hi);
    }
    // embed.cont_proj.*, embed.layer, and the remaining vocab rows keep the
    // fresh initialization
  }
  model.step = 0;
  return model;
}

}  // namespace atck
