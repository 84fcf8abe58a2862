// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#include "atck/codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "atck/common.hpp"

namespace atck {

namespace {

// Stage i downsamples by factors[i] and maps channels[i] to the next width;
// the deepest stage keeps the last width.
int stage_in_width(const CodecConfig& c, int i) {
  return c.channels[size_t(i)];
}

int stage_out_width(const CodecConfig& c, int i) {
  int last = int(c.channels.size()) - 1;
  return c.channels[size_t(std::min(i + 1, last))];
}

// Stages sitting at least a factor of 8 below the waveform rate get a
// stride-1 refinement unit; closer to the waveform the cost outweighs it.
bool stage_has_refiner(const CodecConfig& c, int i) {
  int cum = 1;
  for (int j = 0; j <= i; ++j) cum *= c.factors[size_t(j)];
  return cum >= 8;
}

NodeId param_node(Tape<float>& tape, const ParamStore& params,
                  ParamBinding* binding, const std::string& name) {
  if (binding != nullptr) {
    // leaf() only reads the store; the cast keeps the inference path const.
    return binding->leaf(tape, const_cast<ParamStore&>(params), name);
  }
  return tape.constant(params.at(name).value);
}

}  // namespace

int CodecConfig::hop() const {
  int h = 1;
  for (int f : factors) h *= f;
  return h;
}

void CodecConfig::validate() const {
  check(depth >= 2, "codec config: depth must be at least 2");
  check(codebook_size >= 2, "codec config: codebook_size must be at least 2");
  check(latent_dim >= 1, "codec config: latent_dim must be positive");
  check(!factors.empty(), "codec config: no downsample factors");
  for (int f : factors)
    check(f >= 2 && f % 2 == 0,
          "codec config: factors must be even and at least 2");
  check(channels.size() == factors.size(),
        "codec config: need one channel width per factor");
  for (int ch : channels) check(ch >= 1, "codec config: bad channel width");
  check(decoder_width_mult >= 1, "codec config: bad decoder width multiplier");
  check(sample_rate > 0, "codec config: bad sample rate");
  check(lambda_wav >= 0 && lambda_stft >= 0 && beta >= 0,
        "codec config: negative loss weight");
  check(ema_gamma > 0 && ema_gamma < 1, "codec config: ema_gamma outside (0,1)");
}

CodecConfig codec_config_from(const Config& cfg) {
  CodecConfig c;
  c.depth = int(cfg.get_int("codec.depth"));
  c.codebook_size = int(cfg.get_int("codec.codebook_size"));
  c.latent_dim = int(cfg.get_int("codec.latent_dim"));
  c.factors = cfg.get_int_list("codec.factors");
  c.channels = cfg.get_int_list("codec.channels");
  c.decoder_width_mult = int(cfg.get_int("codec.decoder_width_mult"));
  c.lambda_wav = cfg.get_double("codec.lambda_wav");
  c.lambda_stft = cfg.get_double("codec.lambda_stft");
  c.beta = cfg.get_double("codec.beta");
  c.ema_gamma = cfg.get_double("codec.ema_gamma");
  c.usage_threshold = cfg.get_double("codec.usage_threshold");
  c.sample_rate = int(cfg.get_int("corpus.sample_rate"));
  c.validate();
  return c;
}

Codec make_codec(const Config& cfg, uint64_t seed) {
  Codec codec;
  codec.config = codec_config_from(cfg);
  codec.full_config = cfg;
  const CodecConfig& c = codec.config;
  Rng rng(seed);
  // Fan-in scaled init keeps activation magnitude stable through the stack.
  // A transposed conv spreads its k taps over `stride` output phases, so each
  // output sample sees only k/stride taps and the effective fan-in shrinks.
  auto add_conv = [&](const std::string& name, int k, int cin, int cout,
                      int stride = 1) {
    Tensor w = Tensor::zeros({k, cin, cout});
    double fan = double(k) * double(cin) / double(stride);
    fill_normal(w, rng, 0.0, std::sqrt(2.0 / fan));
    codec.params.add(name + ".w", w);
    codec.params.add(name + ".b", Tensor::zeros({cout}));
  };
  // Refinement units open with a k7 conv and close with a k1 conv whose
  // weights start at zero, so each unit begins as the identity.
  auto add_refiner = [&](const std::string& name, int ch) {
    add_conv(name + ".a", 7, ch, ch);
    add_conv(name + ".b", 1, ch, ch);
    std::fill(codec.params.at(name + ".b.w").value.data.begin(),
              codec.params.at(name + ".b.w").value.data.end(), 0.0f);
  };
  int stages = int(c.factors.size());
  add_conv("enc.in", 7, 1, c.channels[0]);
  for (int i = 0; i < stages; ++i) {
    add_conv("enc.down" + std::to_string(i), 2 * c.factors[size_t(i)],
             stage_in_width(c, i), stage_out_width(c, i));
    if (stage_has_refiner(c, i))
      add_refiner("enc.res" + std::to_string(i), stage_out_width(c, i));
  }
  add_conv("enc.out", 3, c.channels.back(), c.latent_dim);
  int m = c.decoder_width_mult;
  add_conv("dec.in", 3, c.latent_dim, m * c.channels.back());
  for (int i = stages - 1; i >= 0; --i) {
    if (stage_has_refiner(c, i))
      add_refiner("dec.res" + std::to_string(i), m * stage_out_width(c, i));
    add_conv("dec.up" + std::to_string(i), 2 * c.factors[size_t(i)],
             m * stage_out_width(c, i), m * stage_in_width(c, i),
             c.factors[size_t(i)]);
  }
  add_conv("dec.out", 7, m * c.channels[0], 1);
  for (int n = 0; n < c.depth; ++n)
    codec.books.push_back(make_codebook(n, c.codebook_size, c.latent_dim));
  return codec;
}

NodeId build_encoder(Tape<float>& tape, const ParamStore& params,
                     ParamBinding* binding, NodeId wave, const CodecConfig& c) {
  auto P = [&](const std::string& name) {
    return param_node(tape, params, binding, name);
  };
  auto refine = [&](NodeId x, const std::string& s) {
    NodeId r = tape.conv1d(x, P(s + ".a.w"), P(s + ".a.b"), 1, 3);
    r = tape.silu(r);
    r = tape.conv1d(r, P(s + ".b.w"), P(s + ".b.b"), 1, 0);
    return tape.add(x, r);
  };
  NodeId h = tape.conv1d(wave, P("enc.in.w"), P("enc.in.b"), 1, 3);
  h = tape.silu(h);
  for (int i = 0; i < int(c.factors.size()); ++i) {
    int f = c.factors[size_t(i)];
    std::string s = "enc.down" + std::to_string(i);
    h = tape.conv1d(h, P(s + ".w"), P(s + ".b"), f, f / 2);
    h = tape.silu(h);
    if (stage_has_refiner(c, i)) h = refine(h, "enc.res" + std::to_string(i));
  }
  return tape.conv1d(h, P("enc.out.w"), P("enc.out.b"), 1, 1);
}

NodeId build_decoder(Tape<float>& tape, const ParamStore& params,
                     ParamBinding* binding, NodeId latents,
                     const CodecConfig& c) {
  auto P = [&](const std::string& name) {
    return param_node(tape, params, binding, name);
  };
  auto refine = [&](NodeId x, const std::string& s) {
    NodeId r = tape.conv1d(x, P(s + ".a.w"), P(s + ".a.b"), 1, 3);
    r = tape.silu(r);
    r = tape.conv1d(r, P(s + ".b.w"), P(s + ".b.b"), 1, 0);
    return tape.add(x, r);
  };
  NodeId h = tape.conv1d(latents, P("dec.in.w"), P("dec.in.b"), 1, 1);
  h = tape.silu(h);
  for (int i = int(c.factors.size()) - 1; i >= 0; --i) {
    int f = c.factors[size_t(i)];
    std::string s = "dec.up" + std::to_string(i);
    if (stage_has_refiner(c, i)) h = refine(h, "dec.res" + std::to_string(i));
    h = tape.conv1d_transpose(h, P(s + ".w"), P(s + ".b"), f, f / 2);
    h = tape.silu(h);
  }
  return tape.conv1d(h, P("dec.out.w"), P("dec.out.b"), 1, 3);
}

LatentSequence codec_encode_frames(const Codec& codec, const Waveform& w) {
  const CodecConfig& c = codec.config;
  check(w.sample_rate == c.sample_rate,
        "codec_encode_frames: sample rate mismatch");
  int hop = c.hop();
  check(w.length() >= hop, "codec_encode_frames: waveform shorter than one hop");
  int tau = w.length() / hop;
  int t_use = tau * hop;
  Tensor x = Tensor::zeros({t_use, 1});
  std::copy(w.samples.begin(), w.samples.begin() + t_use, x.data.begin());
  Tape<float> tape;
  NodeId z = build_encoder(tape, codec.params, nullptr, tape.constant(x), c);
  LatentSequence seq;
  seq.vectors = tape.val(z);
  seq.frame_rate = c.frame_rate();
  for (float v : seq.vectors.data)
    check(std::isfinite(v), "codec_encode_frames: non-finite latent");
  return seq;
}

Waveform codec_decode_frames(const Codec& codec, const LatentSequence& z) {
  const CodecConfig& c = codec.config;
  check(z.vectors.rank() == 2 && z.vectors.cols() == c.latent_dim,
        "codec_decode_frames: latent dim mismatch");
  check(z.vectors.rows() >= 1, "codec_decode_frames: empty latent sequence");
  Tape<float> tape;
  NodeId y =
      build_decoder(tape, codec.params, nullptr, tape.constant(z.vectors), c);
  const Tensor& out = tape.val(y);
  Waveform w;
  w.sample_rate = c.sample_rate;
  w.samples.assign(out.data.begin(), out.data.end());
  for (float v : w.samples)
    check(std::isfinite(v), "codec_decode_frames: non-finite sample");
  return w;
}

TokenHierarchy codec_encode_tokens(const Codec& codec, const Waveform& w) {
  LatentSequence z = codec_encode_frames(codec, w);
  return rvq_encode(z.vectors, codec.books, codec.config.depth).hierarchy;
}

Waveform codec_decode_tokens(const Codec& codec, const TokenHierarchy& h,
                             int up_to) {
  check(h.codebook_size == codec.config.codebook_size,
        "codec_decode_tokens: codebook size mismatch");
  LatentSequence z;
  z.vectors = rvq_decode(h, codec.books, up_to);
  z.frame_rate = codec.config.frame_rate();
  return codec_decode_frames(codec, z);
}

Checkpoint codec_to_checkpoint(const Codec& codec) {
  Checkpoint ckpt;
  ckpt.config_text = codec.full_config.canonical_text();
  ckpt.config_digest = codec.full_config.digest();
  ckpt.step = uint64_t(codec.step);
  for (const auto& e : codec.params.entries) ckpt.add(e.name, e.value);
  for (size_t n = 0; n < codec.books.size(); ++n) {
    std::string prefix = "rvq" + std::to_string(n);
    ckpt.add(prefix + ".codewords", codec.books[n].codewords);
    ckpt.add(prefix + ".counts", codec.books[n].ema_counts);
    ckpt.add(prefix + ".sums", codec.books[n].ema_sums);
  }
  ckpt.add("rvq.ready", Tensor::scalar(codec.books_ready ? 1.0f : 0.0f));
  return ckpt;
}

Codec codec_from_checkpoint(const Checkpoint& ckpt) {
  Config cfg;
  cfg.apply_text(ckpt.config_text);
  check(cfg.digest() == ckpt.config_digest,
        "codec_from_checkpoint: config text does not match digest");
  Codec codec = make_codec(cfg, 0);
  codec.step = int64_t(ckpt.step);
  for (auto& e : codec.params.entries) {
    const Tensor& t = ckpt.require(e.name);
    check(t.dims == e.value.dims,
          "codec_from_checkpoint: shape mismatch for " + e.name);
    e.value = t;
  }
  for (size_t n = 0; n < codec.books.size(); ++n) {
    std::string prefix = "rvq" + std::to_string(n);
    Codebook& cb = codec.books[n];
    const Tensor& cw = ckpt.require(prefix + ".codewords");
    const Tensor& cnt = ckpt.require(prefix + ".counts");
    const Tensor& sums = ckpt.require(prefix + ".sums");
    check(cw.dims == cb.codewords.dims && cnt.dims == cb.ema_counts.dims &&
              sums.dims == cb.ema_sums.dims,
          "codec_from_checkpoint: codebook shape mismatch");
    cb.codewords = cw;
    cb.ema_counts = cnt;
    cb.ema_sums = sums;
  }
  codec.books_ready = ckpt.require("rvq.ready").data[0] != 0.0f;
  return codec;
}

Codec train_codec(const std::vector<CorpusItem>& items, const Config& cfg,
                  const std::string& save_path, CodecTrainReport* report) {
  check(!items.empty(), "train_codec: empty corpus");
  uint64_t seed = uint64_t(cfg.get_int("train.seed"));
  Codec codec = make_codec(cfg, seed);
  const CodecConfig& c = codec.config;
  int hop = c.hop();
  for (const auto& item : items) {
    check(item.waveform.sample_rate == c.sample_rate,
          "train_codec: corpus sample rate mismatch");
    check(item.waveform.length() >= hop,
          "train_codec: corpus item shorter than one hop");
  }
  int64_t steps = cfg.get_int("train.steps");
  int batch = int(cfg.get_int("train.batch"));
  int clip_frames = int(cfg.get_int("train.clip_frames"));
  int eval_every = std::max(1, int(cfg.get_int("train.eval_every")));
  check(steps >= 1 && batch >= 1 && clip_frames >= 1,
        "train_codec: steps, batch and clip_frames must be positive");
  AdamW opt;
  opt.cfg.lr = cfg.get_double("train.lr");
  opt.cfg.warmup = int(cfg.get_int("train.warmup"));
  Rng rng(Rng::mix(seed, 0xC0DEC));

  struct Crop {
    Waveform ref;
    Tensor x;
    int n_use = 0;
  };

  for (int64_t step = 1; step <= steps; ++step) {
    std::vector<Crop> crops;
    crops.reserve(size_t(batch));
    for (int b = 0; b < batch; ++b) {
      const CorpusItem& item =
          items[size_t(rng.uniform_int(uint64_t(items.size())))];
      int avail = item.waveform.length() / hop;
      int use = std::min(clip_frames, avail);
      int t_use = use * hop;
      int start =
          int(rng.uniform_int(uint64_t(item.waveform.length() - t_use + 1)));
      Crop cr;
      cr.ref.sample_rate = c.sample_rate;
      cr.ref.samples.assign(item.waveform.samples.begin() + start,
                            item.waveform.samples.begin() + start + t_use);
      cr.x = Tensor::zeros({t_use, 1});
      std::copy(cr.ref.samples.begin(), cr.ref.samples.end(),
                cr.x.data.begin());
      cr.n_use = rng.uniform() < 0.5 ? c.depth
                                     : 1 + int(rng.uniform_int(uint64_t(c.depth)));
      crops.push_back(std::move(cr));
    }

    if (!codec.books_ready) {
      // seed every codebook from the first batch of encoder outputs: walk the
      // residual one layer at a time over the pooled frames
      std::vector<Tensor> zs;
      int total_rows = 0;
      for (const Crop& cr : crops) {
        Tape<float> tape;
        NodeId z =
            build_encoder(tape, codec.params, nullptr, tape.constant(cr.x), c);
        zs.push_back(tape.val(z));
        total_rows += zs.back().rows();
      }
      Tensor pool = Tensor::zeros({total_rows, c.latent_dim});
      int at = 0;
      for (const Tensor& z : zs) {
        std::copy(z.data.begin(), z.data.end(),
                  pool.data.begin() + size_t(at) * size_t(c.latent_dim));
        at += z.rows();
      }
      for (int n = 0; n < c.depth; ++n) {
        kmeans_init(codec.books[n], pool, rng);
        auto [idx, q] = quantize_layer(pool, codec.books[n]);
        (void)idx;
        for (size_t i = 0; i < pool.data.size(); ++i) pool.data[i] -= q.data[i];
      }
      codec.books_ready = true;
    }

    codec.params.zero_grads();
    std::vector<std::vector<float>> layer_rows(static_cast<size_t>(c.depth));
    std::vector<std::vector<int>> layer_assigns(static_cast<size_t>(c.depth));
    auto run_crop = [&](const Crop& cr) {
      Tape<float> tape;
      ParamBinding binding;
      NodeId xin = tape.constant(cr.x);
      NodeId z = build_encoder(tape, codec.params, &binding, xin, c);
      const Tensor& zval = tape.val(z);
      Tensor r = zval;
      Tensor q_partial = Tensor::zeros(zval.dims);
      Tensor q_full = Tensor::zeros(zval.dims);
      for (int n = 0; n < c.depth; ++n) {
        auto [idx, q] = quantize_layer(r, codec.books[size_t(n)]);
        auto& buf = layer_rows[size_t(n)];
        buf.insert(buf.end(), r.data.begin(), r.data.end());
        auto& ab = layer_assigns[size_t(n)];
        ab.insert(ab.end(), idx.begin(), idx.end());
        for (size_t i = 0; i < r.data.size(); ++i) {
          q_full.data[i] += q.data[i];
          if (n < cr.n_use) q_partial.data[i] += q.data[i];
          r.data[i] -= q.data[i];
        }
      }
      NodeId st = quantize_straight_through(tape, z, q_partial);
      NodeId y = build_decoder(tape, codec.params, &binding, st, c);
      NodeId l_wav = tape.mean_abs(y, xin);
      NodeId l_stft = tape.custom_scalar(y, multiscale_stft_op(cr.ref));
      NodeId commit = commitment_loss(tape, z, q_full, c.beta);
      NodeId loss = tape.add(tape.add(tape.scale(l_wav, c.lambda_wav),
                                      tape.scale(l_stft, c.lambda_stft)),
                             commit);
      double lv = double(tape.val(loss).data[0]);
      check(std::isfinite(lv), "non-finite loss");
      tape.backward(loss);
      binding.flush_grads(tape, codec.params, 1.0 / batch);
      return lv;
    };
    double step_loss = 0.0;
    for (const Crop& cr : crops) {
      try {
        step_loss += run_crop(cr);
      } catch (const Error& e) {
        if (std::string(e.what()).find("non-finite") != std::string::npos)
          fail("train_codec: diverged at step " + std::to_string(step) + " (" +
               e.what() + ")");
        throw;
      }
    }
    step_loss /= batch;

    for (int n = 0; n < c.depth; ++n) {
      auto& buf = layer_rows[size_t(n)];
      auto& ab = layer_assigns[size_t(n)];
      int rows_n = int(ab.size());
      Tensor rows = Tensor::zeros({rows_n, c.latent_dim});
      check(buf.size() == rows.data.size(), "train_codec: row buffer mismatch");
      rows.data = std::move(buf);
      ema_update(codec.books[size_t(n)], rows, ab, c.ema_gamma);
      reinit_dead_codes(codec.books[size_t(n)], c.usage_threshold, rows, rng);
    }

    opt.step(codec.params);
    codec.step = step;
    if (report) report->step_losses.push_back(step_loss);
    if (!save_path.empty() && (step % eval_every == 0 || step == steps))
      save_checkpoint(save_path, codec_to_checkpoint(codec));
  }
  return codec;
}

std::vector<SdrRow> eval_codec(const Codec& codec,
                               const std::vector<CorpusItem>& items,
                               const std::vector<int>& layer_counts) {
  check(!items.empty(), "eval_codec: no items");
  check(!layer_counts.empty(), "eval_codec: no layer counts");
  for (int cnt : layer_counts)
    check(cnt >= 1 && cnt <= codec.config.depth,
          "eval_codec: layer count out of range");
  int hop = codec.config.hop();
  std::vector<std::vector<double>> per_item(items.size());
  parallel_map(items.size(), [&](size_t i) {
    const Waveform& w = items[i].waveform;
    TokenHierarchy h = codec_encode_tokens(codec, w);
    Waveform ref;
    ref.sample_rate = w.sample_rate;
    ref.samples.assign(w.samples.begin(),
                       w.samples.begin() + size_t(h.length) * size_t(hop));
    per_item[i].resize(layer_counts.size());
    for (size_t j = 0; j < layer_counts.size(); ++j) {
      Waveform est = codec_decode_tokens(codec, h, layer_counts[j]);
      per_item[i][j] = sdr_db(ref, est);
    }
  });
  std::vector<SdrRow> table;
  for (size_t j = 0; j < layer_counts.size(); ++j) {
    double sum = 0.0;
    for (size_t i = 0; i < items.size(); ++i) sum += per_item[i][j];
    table.push_back({layer_counts[j], sum / double(items.size())});
  }
  return table;
}

}  // namespace atck
