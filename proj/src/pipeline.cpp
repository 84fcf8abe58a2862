// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#include "atck/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "atck/common.hpp"

namespace atck {

namespace {

constexpr uint64_t kGenSalt = 0x6E0;

int resolve_depth(const GenerationRequest& req, int supported,
                  const char* where) {
  int depth = req.depth == 0 ? supported : req.depth;
  check(depth >= 2 && depth <= supported,
        std::string(where) + ": depth out of range");
  return depth;
}

// One causal forward over the prefix; returns the sampled id for the block.
int next_token(const LMModel& model, const std::vector<int>& ids, Range block,
               double temperature, int top_k, Rng& rng) {
  Tape<float> tape;
  std::vector<PositionInput> inputs;
  inputs.reserve(ids.size());
  for (int id : ids) inputs.push_back(token_input(id));
  AttentionMask mask = build_mask(MaskKind::Causal, int(ids.size()));
  NodeId logits = lm_forward(tape, model, nullptr, inputs, mask);
  return sample_next(tape.val(logits), int(ids.size()) - 1, block, temperature,
                     top_k, rng);
}

void check_codec_stamp(const LMModel& model, const Codec& codec,
                       const char* who) {
  std::string stamp = model.full_config.get_string("train.codec_digest");
  if (stamp.empty()) return;
  std::string live = digest_hex(checkpoint_digest(codec_to_checkpoint(codec)));
  check(stamp == live, std::string("generate: ") + who +
                           " was trained against a different codec");
}

}  // namespace

uint64_t layer_digest(const TokenHierarchy& h, int layer) {
  check(layer >= 0 && layer < h.depth, "layer_digest: layer out of range");
  uint64_t d = 1469598103934665603ull;
  for (int t = 0; t < h.length; ++t) {
    uint32_t v = uint32_t(h.at(layer, t));
    for (int i = 0; i < 4; ++i) {
      d ^= (v >> (8 * i)) & 0xffu;
      d *= 1099511628211ull;
    }
  }
  return d;
}

TokenHierarchy generate_backbone(const LMModel& backbone,
                                 const GenerationRequest& req,
                                 GenerationMeta* meta) {
  const LMConfig& c = backbone.config;
  const VocabLayout& v = c.vocab;
  int depth = resolve_depth(req, v.depth, "generate_backbone");

  CodecConfig cc = codec_config_from(backbone.full_config);
  int tau = int(std::lround(req.text.duration_s * cc.frame_rate()));
  check(tau >= 1, "generate_backbone: duration shorter than one frame");
  std::vector<int> ids = tokenize_text(req.text, v);
  check(int(ids.size()) + 2 * tau + 1 <= c.max_seq_len,
        "generate_backbone: request longer than the model's context");

  Rng rng(Rng::mix(req.seed, kGenSalt));
  TokenHierarchy h = make_hierarchy(depth, tau, v.codebook_size);
  for (int t = 0; t < tau; ++t) {
    int id0 = next_token(backbone, ids, v.stop_or_layer0_block(),
                         req.temperature, req.top_k, rng);
    if (id0 == v.eos()) {
      // duration-forced: log the early stop and draw a layer-0 token instead
      if (meta != nullptr && !meta->eos_early) {
        meta->eos_early = true;
        meta->eos_step = t;
      }
      id0 = next_token(backbone, ids, v.layer_block(0), req.temperature,
                       req.top_k, rng);
    }
    h.set(0, t, v.layer_token_index(id0, 0));
    ids.push_back(id0);
    int id1 = next_token(backbone, ids, v.layer_block(1), req.temperature,
                         req.top_k, rng);
    h.set(1, t, v.layer_token_index(id1, 1));
    ids.push_back(id1);
  }
  if (meta != nullptr) {
    meta->layer_digests.assign({layer_digest(h, 0), layer_digest(h, 1)});
  }
  return h;
}

TokenHierarchy super_resolve(const LMModel& sr, const Codec& codec,
                             const GenerationRequest& req,
                             const TokenHierarchy& partial,
                             GenerationMeta* meta, int from_layer) {
  const VocabLayout& v = sr.config.vocab;
  check(from_layer >= 1, "super_resolve: from_layer must be at least 1");
  check(partial.depth >= from_layer,
        "super_resolve: partial hierarchy is missing the lower layers");
  check(partial.depth <= v.depth,
        "super_resolve: hierarchy deeper than the model supports");

  std::vector<Tensor> books;
  check(int(codec.books.size()) >= partial.depth,
        "super_resolve: codec has fewer layers than the hierarchy");
  for (int i = 0; i < partial.depth; ++i)
    books.push_back(codec.books[size_t(i)].codewords);

  TokenHierarchy h = partial;
  Rng rng(Rng::mix(req.seed, kGenSalt) + 1);
  for (int n = from_layer; n < h.depth; ++n) {
    TaskInstance inst = build_task1(req.text, h, books, n, v);
    Tape<float> tape;
    AttentionMask mask = build_mask(inst.mask_kind, inst.length());
    NodeId logits = lm_forward(tape, sr, nullptr, inst.inputs, mask);
    const Tensor& out = tape.val(logits);
    std::vector<int> positions;
    for (size_t i = 0; i < inst.loss_mask.size(); ++i)
      if (inst.loss_mask[i]) positions.push_back(int(i));
    check(int(positions.size()) == h.length,
          "super_resolve: pass emits one token per frame");
    for (int t = 0; t < h.length; ++t) {
      int id = sample_next(out, positions[size_t(t)], inst.blocks[size_t(
                               positions[size_t(t)])],
                           0.0, 1, rng);
      h.set(n, t, v.layer_token_index(id, n));
    }
    if (meta != nullptr) {
      ++meta->sr_passes;
      meta->layer_digests.push_back(layer_digest(h, n));
    }
  }
  return h;
}

Waveform render(const Codec& codec, const TokenHierarchy& h, int depth) {
  if (depth == 0) depth = h.depth;
  check(depth >= 2 && depth <= h.depth, "render: depth out of range");
  Waveform w = codec_decode_tokens(codec, h, depth);
  for (float& s : w.samples) s = std::clamp(s, -1.0f, 1.0f);
  return w;
}

GenerationResult generate(const LMModel& backbone, const LMModel& sr,
                          const Codec& codec, const GenerationRequest& req) {
  const VocabLayout& bv = backbone.config.vocab;
  const VocabLayout& sv = sr.config.vocab;
  check(bv.codebook_size == codec.config.codebook_size &&
            sv.codebook_size == codec.config.codebook_size,
        "generate: codebook size disagrees with the codec");
  check(codec_config_from(backbone.full_config).frame_rate() ==
                codec.config.frame_rate() &&
            codec_config_from(sr.full_config).frame_rate() ==
                codec.config.frame_rate(),
        "generate: frame rate disagrees with the codec");
  check_codec_stamp(backbone, codec, "the backbone");
  check_codec_stamp(sr, codec, "the refinement model");

  int supported = std::min({bv.depth, sv.depth, codec.config.depth});
  GenerationRequest resolved = req;
  resolved.depth = resolve_depth(req, supported, "generate");

  GenerationResult out;
  out.tokens = generate_backbone(backbone, resolved, &out.meta);
  out.tokens = super_resolve(sr, codec, resolved, out.tokens, &out.meta);
  check(out.meta.sr_passes == resolved.depth - 2,
        "generate: refinement pass count off the depth - 2 law");
  out.wave = render(codec, out.tokens, resolved.depth);
  return out;
}

}  // namespace atck
