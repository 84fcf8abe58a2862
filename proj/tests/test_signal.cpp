// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "atck/signal.hpp"

using namespace atck;

namespace {

Waveform sine(double hz, double amp, int len, int rate) {
  Waveform w;
  w.sample_rate = rate;
  for (int t = 0; t < len; ++t)
    w.samples.push_back(float(amp * std::sin(2.0 * M_PI * hz * t / rate)));
  return w;
}

Waveform noise_wave(uint64_t seed, double std, int len, int rate) {
  Waveform w;
  w.sample_rate = rate;
  Rng rng(seed);
  for (int t = 0; t < len; ++t) w.samples.push_back(float(rng.normal(0, std)));
  return w;
}

}  // namespace

TEST_CASE("stft: zero input, frame arithmetic, linearity") {
  Waveform z;
  z.sample_rate = 16000;
  z.samples.assign(200, 0.0f);
  Spectrogram s = stft(z, 78, 20);
  CHECK(s.frames() == 7);  // (200-78)/20 + 1
  CHECK(s.bins() == 40);
  for (float v : s.magnitudes.data) CHECK(v == 0.0f);

  Waveform x = noise_wave(3, 0.3, 500, 16000);
  Waveform x2 = x;
  for (auto& v : x2.samples) v *= 2.0f;
  Spectrogram a = stft(x, 126, 32), b = stft(x2, 126, 32);
  for (int64_t i = 0; i < a.magnitudes.numel(); ++i) {
    double av = a.magnitudes.data[size_t(i)], bv = b.magnitudes.data[size_t(i)];
    CHECK(bv == doctest::Approx(2.0 * av).epsilon(1e-5));
  }

  CHECK_THROWS_AS(stft(z, 256, 64), Error);  // shorter than one window
}

TEST_CASE("stft: bin-centered sinusoid concentrates in three bins") {
  int n = 512, rate = 16000;
  int k = 20;  // exactly bin-centered: hz = k * rate / n
  Waveform w = sine(double(k) * rate / n, 0.8, n, rate);
  Spectrogram s = stft(w, n, n);
  REQUIRE(s.frames() == 1);
  double total = 0.0, local = 0.0;
  for (int j = 0; j < s.bins(); ++j) {
    double e = double(s.magnitudes.row(0)[j]) * double(s.magnitudes.row(0)[j]);
    total += e;
    if (j >= k - 1 && j <= k + 1) local += e;
  }
  CHECK(local / total >= 0.90);
}

TEST_CASE("spectral loss: identity, symmetry, positivity, scale dropping") {
  Waveform x = noise_wave(11, 0.2, 3000, 16000);
  CHECK(multiscale_stft_loss(x, x) == doctest::Approx(0.0));
  Waveform y = x;
  for (auto& v : y.samples) v *= 2.0f;
  CHECK(multiscale_stft_loss(x, y) > 0.0);
  CHECK(multiscale_stft_loss(x, y) ==
        doctest::Approx(multiscale_stft_loss(y, x)).epsilon(1e-9));

  // 200 samples only fits the two smallest scales; loss still computes
  Waveform s1 = noise_wave(12, 0.2, 200, 16000);
  Waveform s2 = noise_wave(13, 0.2, 200, 16000);
  CHECK(multiscale_stft_loss(s1, s2) > 0.0);

  Waveform tiny = noise_wave(14, 0.2, 50, 16000);
  CHECK_THROWS_AS(multiscale_stft_loss(tiny, tiny), Error);
  CHECK_THROWS_AS(multiscale_stft_loss(x, s1), Error);  // length mismatch
}

TEST_CASE("spectral loss op: forward matches the free function") {
  Waveform x = noise_wave(21, 0.25, 400, 16000);
  Waveform y = noise_wave(22, 0.25, 400, 16000);
  Tape<float> t;
  NodeId yn = t.leaf(Tensor::from({400, 1}, y.samples));
  NodeId loss = t.custom_scalar(yn, multiscale_stft_op(x));
  CHECK(double(t.val(loss).data[0]) ==
        doctest::Approx(multiscale_stft_loss(x, y)).epsilon(1e-6));
}

TEST_CASE("spectral loss op: gradient matches finite differences") {
  Waveform x = noise_wave(31, 0.25, 200, 16000);
  Waveform y = noise_wave(32, 0.25, 200, 16000);

  auto value_at = [&](const std::vector<float>& samples) {
    Waveform w;
    w.sample_rate = 16000;
    w.samples = samples;
    return multiscale_stft_loss(x, w);
  };

  Tape<float> t;
  NodeId yn = t.leaf(Tensor::from({200}, y.samples));
  NodeId loss = t.custom_scalar(yn, multiscale_stft_op(x));
  t.backward(loss);

  Rng rng(33);
  double h = 1e-3, worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    auto c = size_t(rng.uniform_int(200));
    std::vector<float> plus = y.samples, minus = y.samples;
    plus[c] += float(h);
    minus[c] -= float(h);
    double fd = (value_at(plus) - value_at(minus)) / (2.0 * h);
    double ad = double(t.grad(yn).data[c]);
    worst = std::max(worst,
                     std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)}));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("sdr: exact match, zero estimate, pinned 10 dB case, monotone") {
  Waveform ref = sine(220, 0.5, 4000, 16000);
  CHECK(sdr_db(ref, ref) == doctest::Approx(100.0));

  Waveform zero = ref;
  std::fill(zero.samples.begin(), zero.samples.end(), 0.0f);
  CHECK(sdr_db(ref, zero) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK_THROWS_AS(sdr_db(zero, ref), Error);

  // est = ref + n with |n|^2 = |ref|^2 / 10 gives exactly 10 dB
  double sig = 0.0;
  for (float v : ref.samples) sig += double(v) * double(v);
  Waveform n = noise_wave(41, 1.0, 4000, 16000);
  double nn = 0.0;
  for (float v : n.samples) nn += double(v) * double(v);
  double target = std::sqrt((sig / 10.0) / nn);
  Waveform est = ref;
  for (int i = 0; i < 4000; ++i)
    est.samples[size_t(i)] += float(target * double(n.samples[size_t(i)]));
  CHECK(sdr_db(ref, est) == doctest::Approx(10.0).epsilon(1e-4));

  double prev = 1e9;
  for (double level : {0.01, 0.03, 0.1, 0.3, 1.0}) {
    Waveform e = ref;
    for (int i = 0; i < 4000; ++i)
      e.samples[size_t(i)] += float(level * double(n.samples[size_t(i)]));
    double v = sdr_db(ref, e);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("corpus: determinism and per-item seed independence") {
  CorpusConfig cfg;
  cfg.n_items = 4;
  cfg.symbols_per_item = 3;
  cfg.segment_s = 0.25;
  auto a = synth_corpus(cfg, 123);
  auto b = synth_corpus(cfg, 123);
  REQUIRE(a.size() == 4);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].lyric == b[i].lyric);
    CHECK(std::memcmp(a[i].waveform.samples.data(), b[i].waveform.samples.data(),
                      a[i].waveform.samples.size() * sizeof(float)) == 0);
  }
  auto c = synth_corpus(cfg, 124);
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i)
    any_diff = any_diff || a[i].lyric != c[i].lyric ||
               a[i].waveform.samples != c[i].waveform.samples;
  CHECK(any_diff);

  // item 2 does not depend on how many items the corpus has
  CorpusConfig wide = cfg;
  wide.n_items = 9;
  auto d = synth_corpus(wide, 123);
  CHECK(a[2].lyric == d[2].lyric);
  CHECK(a[2].waveform.samples == d[2].waveform.samples);
}

TEST_CASE("corpus: single-symbol item has its tone as the dominant bin") {
  CorpusConfig cfg;
  cfg.n_items = 1;
  cfg.symbols_per_item = 1;
  cfg.segment_s = 0.5;
  cfg.noise_db = -40.0;
  for (uint64_t seed = 50; seed < 60; ++seed) {
    CorpusItem item = synth_item(cfg, seed, 0);
    REQUIRE(item.lyric.size() == 1);
    REQUIRE(item.waveform.length() == 8000);
    int n = 2048;
    Spectrogram s = stft(item.waveform, n, 512);
    std::vector<double> power(size_t(s.bins()), 0.0);
    for (int f = 0; f < s.frames(); ++f)
      for (int k = 0; k < s.bins(); ++k)
        power[size_t(k)] += double(s.magnitudes.row(f)[k]) *
                            double(s.magnitudes.row(f)[k]);
    int arg = 0;
    for (int k = 1; k < s.bins(); ++k)
      if (power[size_t(k)] > power[size_t(arg)]) arg = k;
    double got_hz = double(arg) * cfg.sample_rate / n;
    double want_hz = symbol_hz(item.lyric[0]);
    CHECK(std::abs(got_hz - want_hz) <= double(cfg.sample_rate) / n);
  }
}

TEST_CASE("corpus: pitch map and lyric strings") {
  CHECK(symbol_hz(0) == doctest::Approx(220.0));
  CHECK(symbol_hz(12) == doctest::Approx(440.0));
  CHECK(symbol_char(0) == 'A');
  CHECK(lyric_string({0, 2, 15}) == "ACP");
  CHECK(parse_lyric("ACP", 16) == std::vector<int>{0, 2, 15});
  CHECK_THROWS_AS(parse_lyric("A!", 16), Error);
  CHECK_THROWS_AS(parse_lyric("AQ", 16), Error);  // Q = 16, outside vocab
  CHECK_THROWS_AS(parse_lyric("", 16), Error);
}

TEST_CASE("corpus: write and load round trip bit for bit") {
  CorpusConfig cfg;
  cfg.n_items = 3;
  cfg.symbols_per_item = 2;
  cfg.segment_s = 0.125;
  auto items = synth_corpus(cfg, 77);
  std::string dir = (std::filesystem::temp_directory_path() /
                     "atck_test_corpus").string();
  std::filesystem::remove_all(dir);
  write_corpus(dir, items, cfg.sample_rate);
  LoadedCorpus back = load_corpus(dir);
  CHECK(back.sample_rate == cfg.sample_rate);
  REQUIRE(back.items.size() == items.size());
  for (size_t i = 0; i < items.size(); ++i) {
    CHECK(back.items[i].id == items[i].id);
    CHECK(back.items[i].lyric == items[i].lyric);
    CHECK(back.items[i].seed == items[i].seed);
    CHECK(back.items[i].duration_s == doctest::Approx(items[i].duration_s));
    CHECK(back.items[i].waveform.samples == items[i].waveform.samples);
  }
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_corpus(dir), Error);
}

TEST_CASE("waveform headroom check") {
  Waveform w;
  w.sample_rate = 16000;
  CHECK_THROWS_AS(check_waveform(w, "t"), Error);  // empty
  w.samples = {0.5f, -3.9f, 3.9f};
  check_waveform(w, "t");
  w.samples.push_back(4.5f);
  CHECK_THROWS_AS(check_waveform(w, "t"), Error);
}
