// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "atck/checkpoint.hpp"
#include "atck/config.hpp"
#include "atck/optim.hpp"
#include "atck/rvq.hpp"
#include "atck/signal.hpp"

namespace atck {

// Shape of the convolutional stack and its loss weights, resolved from the
// flat config. The hop (product of downsample factors) sets the frame rate.
struct CodecConfig {
  int depth = 16;
  int codebook_size = 256;
  int latent_dim = 64;
  std::vector<int> factors = {8, 8, 8};
  std::vector<int> channels = {24, 32, 48};
  int decoder_width_mult = 2;
  double lambda_wav = 1.0;
  double lambda_stft = 1.0;
  double beta = 0.25;
  double ema_gamma = 0.99;
  double usage_threshold = 2.0;
  int sample_rate = 16000;

  int hop() const;
  double frame_rate() const { return double(sample_rate) / hop(); }
  void validate() const;
};

CodecConfig codec_config_from(const Config& cfg);

// Live model: conv parameters in the store, RVQ codebooks alongside them.
// Codebooks learn by EMA, not gradient, so they sit outside the store.
struct Codec {
  CodecConfig config;
  Config full_config;
  ParamStore params;
  std::vector<Codebook> books;
  int64_t step = 0;
  bool books_ready = false;  // set once codebooks are seeded from data
};

Codec make_codec(const Config& cfg, uint64_t seed);

// Appends the encoder (waveform [T,1] -> latents [T/hop, D]) or decoder
// (latents [tau,D] -> waveform [tau*hop,1]) to the tape. With a binding the
// parameters become gradient-tracked leaves; without one they are constants.
NodeId build_encoder(Tape<float>& tape, const ParamStore& params,
                     ParamBinding* binding, NodeId wave, const CodecConfig& c);
NodeId build_decoder(Tape<float>& tape, const ParamStore& params,
                     ParamBinding* binding, NodeId latents,
                     const CodecConfig& c);

// tau = floor(len/hop) frames; trailing partial hop is dropped.
LatentSequence codec_encode_frames(const Codec& codec, const Waveform& w);
// Output length is exactly frames*hop.
Waveform codec_decode_frames(const Codec& codec, const LatentSequence& z);

TokenHierarchy codec_encode_tokens(const Codec& codec, const Waveform& w);
// Decodes the partial codeword sum of layers [0, up_to).
Waveform codec_decode_tokens(const Codec& codec, const TokenHierarchy& h,
                             int up_to);

Checkpoint codec_to_checkpoint(const Codec& codec);
Codec codec_from_checkpoint(const Checkpoint& ckpt);

struct CodecTrainReport {
  std::vector<double> step_losses;  // index i = loss at step i+1
};

// Training loop over random crops: lambda_wav*L1 + lambda_stft*spectral +
// commitment, straight-through across the quantizer, EMA codebook updates
// with dead-code reinit every step. The decoded layer count is sampled per
// item (half the time all layers, else uniform in [1, depth]) so shallow
// prefixes of the stack stay decodable. Deterministic given train.seed.
Codec train_codec(const std::vector<CorpusItem>& items, const Config& cfg,
                  const std::string& save_path = "",
                  CodecTrainReport* report = nullptr);

struct SdrRow {
  int layers = 0;
  double mean_sdr = 0.0;
};

// Round-trip SDR of partial decodes, averaged over the given items.
std::vector<SdrRow> eval_codec(const Codec& codec,
                               const std::vector<CorpusItem>& items,
                               const std::vector<int>& layer_counts);

}  // namespace atck
