// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "atck/codec.hpp"
#include "atck/common.hpp"

using namespace atck;

namespace {

Config tiny_cfg(int steps) {
  Config cfg;
  cfg.apply_text(
      "codec.depth=4\n"
      "codec.codebook_size=16\n"
      "codec.latent_dim=8\n"
      "codec.factors=4,4\n"
      "codec.channels=6,8\n"
      "codec.usage_threshold=0.01\n"
      "train.batch=2\n"
      "train.clip_frames=8\n"
      "train.warmup=10\n"
      "train.lr=0.001\n"
      "train.steps=" +
      std::to_string(steps) + "\n");
  return cfg;
}

std::vector<CorpusItem> tiny_corpus(int n_items, uint64_t seed) {
  CorpusConfig cc;
  cc.n_items = n_items;
  cc.symbols_per_item = 4;
  cc.segment_s = 0.125;
  cc.noise_db = -30.0;
  return synth_corpus(cc, seed);
}

Waveform const_wave(int len, float value) {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(size_t(len), value);
  return w;
}

}  // namespace

TEST_CASE("codec: config resolution") {
  Config cfg;
  CodecConfig c = codec_config_from(cfg);
  CHECK(c.hop() == 512);
  CHECK(c.frame_rate() == doctest::Approx(31.25));
  CHECK(c.depth == 16);
  CHECK(c.channels == std::vector<int>{24, 32, 48});

  CodecConfig tiny = codec_config_from(tiny_cfg(1));
  CHECK(tiny.hop() == 16);
  CHECK(tiny.frame_rate() == doctest::Approx(1000.0));

  Config bad = tiny_cfg(1);
  bad.set("codec.factors", "3,4");
  CHECK_THROWS_WITH_AS(codec_config_from(bad), doctest::Contains("even"),
                       Error);
  bad = tiny_cfg(1);
  bad.set("codec.channels", "6,8,10");
  CHECK_THROWS_WITH_AS(codec_config_from(bad),
                       doctest::Contains("channel width per factor"), Error);
  bad = tiny_cfg(1);
  bad.set("codec.depth", "1");
  CHECK_THROWS_AS(codec_config_from(bad), Error);
}

TEST_CASE("codec: encode and decode shape contracts") {
  Codec codec = make_codec(tiny_cfg(1), 1);
  LatentSequence z = codec_encode_frames(codec, const_wave(160, 0.1f));
  CHECK(z.vectors.rows() == 10);
  CHECK(z.vectors.cols() == 8);
  CHECK(z.frame_rate == doctest::Approx(1000.0));
  // trailing partial hop dropped
  LatentSequence z2 = codec_encode_frames(codec, const_wave(165, 0.1f));
  CHECK(z2.vectors.rows() == 10);

  Waveform out = codec_decode_frames(codec, z);
  CHECK(out.length() == 160);
  for (float v : out.samples) CHECK(std::isfinite(v));

  // silence encodes to finite latents, zero latents decode to finite audio
  LatentSequence zs = codec_encode_frames(codec, const_wave(64, 0.0f));
  for (float v : zs.vectors.data) CHECK(std::isfinite(v));
  LatentSequence zero;
  zero.vectors = Tensor::zeros({5, 8});
  zero.frame_rate = 1000.0;
  CHECK(codec_decode_frames(codec, zero).length() == 80);

  CHECK_THROWS_WITH_AS(codec_encode_frames(codec, const_wave(15, 0.1f)),
                       doctest::Contains("shorter"), Error);
  LatentSequence badz;
  badz.vectors = Tensor::zeros({5, 7});
  CHECK_THROWS_WITH_AS(codec_decode_frames(codec, badz),
                       doctest::Contains("dim"), Error);
  Waveform wrong_rate = const_wave(160, 0.1f);
  wrong_rate.sample_rate = 8000;
  CHECK_THROWS_WITH_AS(codec_encode_frames(codec, wrong_rate),
                       doctest::Contains("sample rate"), Error);
}

TEST_CASE("codec: encode is deterministic") {
  Codec codec = make_codec(tiny_cfg(1), 7);
  Waveform w = tiny_corpus(1, 3)[0].waveform;
  LatentSequence a = codec_encode_frames(codec, w);
  LatentSequence b = codec_encode_frames(codec, w);
  REQUIRE(a.vectors.data.size() == b.vectors.data.size());
  CHECK(std::memcmp(a.vectors.data.data(), b.vectors.data.data(),
                    a.vectors.data.size() * sizeof(float)) == 0);
}

TEST_CASE("codec: checkpoint round trip preserves behavior") {
  auto corpus = tiny_corpus(2, 11);
  Config cfg = tiny_cfg(3);
  Codec codec = train_codec(corpus, cfg);
  std::string path =
      (std::filesystem::temp_directory_path() / "atck_codec_rt.atck").string();
  Checkpoint ckpt = codec_to_checkpoint(codec);
  save_checkpoint(path, ckpt);
  Codec back = codec_from_checkpoint(load_checkpoint(path));
  CHECK(back.step == codec.step);
  CHECK(back.books_ready == codec.books_ready);
  CHECK(checkpoint_digest(codec_to_checkpoint(back)) ==
        checkpoint_digest(ckpt));
  LatentSequence a = codec_encode_frames(codec, corpus[0].waveform);
  LatentSequence b = codec_encode_frames(back, corpus[0].waveform);
  CHECK(std::memcmp(a.vectors.data.data(), b.vectors.data.data(),
                    a.vectors.data.size() * sizeof(float)) == 0);
  TokenHierarchy h = codec_encode_tokens(codec, corpus[0].waveform);
  Waveform wa = codec_decode_tokens(codec, h, 4);
  Waveform wb = codec_decode_tokens(back, h, 4);
  CHECK(std::memcmp(wa.samples.data(), wb.samples.data(),
                    wa.samples.size() * sizeof(float)) == 0);
  std::filesystem::remove(path);
}

TEST_CASE("codec: one step moves encoder, decoder and codebooks") {
  auto corpus = tiny_corpus(2, 5);
  Config cfg = tiny_cfg(1);
  Codec before = make_codec(cfg, uint64_t(cfg.get_int("train.seed")));
  Codec after = train_codec(corpus, cfg);
  CHECK(after.step == 1);
  CHECK(after.books_ready);
  auto moved = [&](const std::string& name) {
    const Tensor& a = before.params.at(name).value;
    const Tensor& b = after.params.at(name).value;
    double delta = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
      delta += std::fabs(double(a.data[i]) - double(b.data[i]));
    return delta > 0.0;
  };
  CHECK(moved("enc.in.w"));
  CHECK(moved("enc.out.w"));
  CHECK(moved("dec.up0.w"));
  CHECK(moved("dec.out.w"));
  double count_sum = 0.0;
  for (float v : after.books[0].ema_counts.data) count_sum += v;
  CHECK(count_sum > 0.0);
  double cw_mag = 0.0;
  for (float v : after.books[0].codewords.data) cw_mag += std::fabs(v);
  CHECK(cw_mag > 0.0);
}

TEST_CASE("codec: training is deterministic in the seed") {
  auto corpus = tiny_corpus(2, 5);
  Config cfg = tiny_cfg(3);
  Digest a = checkpoint_digest(codec_to_checkpoint(train_codec(corpus, cfg)));
  Digest b = checkpoint_digest(codec_to_checkpoint(train_codec(corpus, cfg)));
  CHECK(a == b);
  cfg.set("train.seed", "1");
  Digest c = checkpoint_digest(codec_to_checkpoint(train_codec(corpus, cfg)));
  CHECK(a != c);
}

TEST_CASE("codec: loss falls and reconstruction beats the untrained model") {
  auto corpus = tiny_corpus(2, 21);
  std::vector<double> gaps;
  double trained_sdr = 0.0;
  double untrained_sdr = 0.0;
  for (int seed = 0; seed < 3; ++seed) {
    Config cfg = tiny_cfg(1500);
    cfg.set("train.seed", std::to_string(seed));
    CodecTrainReport report;
    Codec codec = train_codec(corpus, cfg, "", &report);
    REQUIRE(report.step_losses.size() == 1500);
    double early = 0.0, late = 0.0;
    for (int s = 5; s < 15; ++s) early += report.step_losses[size_t(s)];
    for (int s = 1490; s < 1500; ++s) late += report.step_losses[size_t(s)];
    gaps.push_back(early - late);
    if (seed == 0) {
      std::vector<SdrRow> table = eval_codec(codec, corpus, {1, 4});
      trained_sdr = table.back().mean_sdr;
      Codec fresh = make_codec(cfg, 99);
      untrained_sdr = eval_codec(fresh, corpus, {4}).back().mean_sdr;
      CHECK(table.back().mean_sdr >= table.front().mean_sdr - 0.5);
    }
  }
  std::sort(gaps.begin(), gaps.end());
  CHECK(gaps[1] > 0.0);  // median seed improved
  CHECK(trained_sdr > untrained_sdr + 2.0);
}

TEST_CASE("codec: eval table validation") {
  Codec codec = make_codec(tiny_cfg(1), 2);
  auto corpus = tiny_corpus(1, 8);
  CHECK_THROWS_WITH_AS(eval_codec(codec, corpus, {0}),
                       doctest::Contains("range"), Error);
  CHECK_THROWS_WITH_AS(eval_codec(codec, corpus, {5}),
                       doctest::Contains("range"), Error);
  std::vector<SdrRow> table = eval_codec(codec, corpus, {2, 1, 4});
  REQUIRE(table.size() == 3);
  CHECK(table[0].layers == 2);
  CHECK(table[1].layers == 1);
  CHECK(table[2].layers == 4);
}

TEST_CASE("codec: divergence aborts with the step number") {
  auto corpus = tiny_corpus(1, 4);
  Config cfg = tiny_cfg(20);
  cfg.set("train.lr", "1e6");
  cfg.set("train.warmup", "0");
  CHECK_THROWS_WITH_AS(train_codec(corpus, cfg), doctest::Contains("step"),
                       Error);
}
