// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "atck/tape.hpp"

namespace atck {

struct Waveform {
  std::vector<float> samples;
  int sample_rate = 16000;

  int length() const { return int(samples.size()); }
  double duration_s() const { return double(samples.size()) / sample_rate; }
};

// Enforces the waveform invariants: non-empty, samples within [-4, 4].
void check_waveform(const Waveform& w, const std::string& what);

struct Spectrogram {
  Tensor magnitudes;  // [frames, bins]
  int fft_size = 0;
  int hop = 0;
  int window = 0;

  int frames() const { return magnitudes.rows(); }
  int bins() const { return magnitudes.cols(); }
};

// Periodic Hann window of length n.
std::vector<double> hann_window(int n);

// Magnitude STFT with a periodic Hann window of window = fft_size.
// frames = floor((len - window)/hop) + 1, bins = fft_size/2 + 1.
Spectrogram stft(const Waveform& w, int fft_size, int hop);

// FFT sizes of the spectral loss bank; hop is round(size/4) with the window
// equal to the FFT size.
const std::vector<int>& spectral_loss_fft_sizes();
int spectral_loss_hop(int fft_size);

// Sum over scales of mean|Sx - Sy| + mean|log(Sx+eps) - log(Sy+eps)|, with
// eps = 1e-5. Scales whose FFT size exceeds the signal length are dropped;
// if every scale is dropped loss construction fails.
double multiscale_stft_loss(const Waveform& x, const Waveform& y);

// Tape op computing the loss against a fixed reference, differentiable in the
// estimate. The estimate node may have any shape; its elements are read in
// order as samples and must match the reference length.
Tape<float>::CustomScalar multiscale_stft_op(Waveform ref);

// 10*log10(|ref|^2 / |ref-est|^2), capped at +100 dB.
double sdr_db(const Waveform& ref, const Waveform& est);

// ---- Synthetic lyric-conditioned corpus ----------------------------------

struct CorpusConfig {
  int n_items = 32;
  int vocab_size = 16;      // at most 32 symbols
  int symbols_per_item = 4;
  double segment_s = 0.5;   // seconds per lyric symbol
  int sample_rate = 16000;
  double noise_db = -20.0;  // relative to the tone amplitude; <= -180 disables
};

struct CorpusItem {
  int id = 0;
  std::vector<int> lyric;
  double duration_s = 0.0;
  uint64_t seed = 0;
  Waveform waveform;
};

// Pitch of a lyric symbol: 220 * 2^(s/12) Hz.
double symbol_hz(int symbol);

// Symbols print as letters 'A', 'B', ... (vocab is capped at 32).
char symbol_char(int symbol);
std::string lyric_string(const std::vector<int>& lyric);
std::vector<int> parse_lyric(const std::string& text, int vocab_size);

// Renders one item: per-symbol enveloped sinusoids over a constant low
// accompaniment triad at -12 dB, plus white noise at noise_db. The item seed
// is derived from (corpus_seed, id), so items are independent of n_items.
CorpusItem synth_item(const CorpusConfig& cfg, uint64_t corpus_seed, int id);
std::vector<CorpusItem> synth_corpus(const CorpusConfig& cfg, uint64_t seed);

// On-disk corpus: a text manifest plus one raw little-endian float32 PCM file
// per item.
void write_corpus(const std::string& dir, const std::vector<CorpusItem>& items,
                  int sample_rate);
struct LoadedCorpus {
  int sample_rate = 0;
  std::vector<CorpusItem> items;
};
LoadedCorpus load_corpus(const std::string& dir);

}  // namespace atck
