// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#include "atck/signal.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "atck/dft.hpp"

namespace atck {
namespace {

using cd = std::complex<double>;

constexpr double kToneAmp = 0.45;
constexpr double kAttackS = 0.05;
constexpr double kDecayRate = 1.5;  // 1/s
constexpr double kTriadDb = -12.0;
// A2 and the major third and fifth above it.
constexpr double kTriadHz[3] = {110.0, 138.59, 164.81};
constexpr double kLogEps = 1e-5;

const char kSymbolAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdef";

// One frame of the complex STFT, stored bins [0, n/2].
void frame_dft(const float* x, const std::vector<double>& win, int n,
               std::vector<cd>& scratch, std::vector<cd>& out) {
  scratch.assign(size_t(n), cd(0.0, 0.0));
  for (int t = 0; t < n; ++t)
    scratch[size_t(t)] = cd(win[size_t(t)] * double(x[t]), 0.0);
  fft(scratch, false);
  out.assign(size_t(n / 2 + 1), cd(0.0, 0.0));
  for (int k = 0; k <= n / 2; ++k) out[size_t(k)] = scratch[size_t(k)];
}

int frame_count(int len, int window, int hop) {
  return (len - window) / hop + 1;
}

struct ScaleRef {
  int fft_size = 0;
  int hop = 0;
  Tensor mags;  // reference magnitudes [frames, bins]
};

}  // namespace

void check_waveform(const Waveform& w, const std::string& what) {
  check(!w.samples.empty(), what + ": empty waveform");
  check(w.sample_rate > 0, what + ": bad sample rate");
  for (float v : w.samples)
    check(std::isfinite(v) && v >= -4.0f && v <= 4.0f,
          what + ": sample out of [-4, 4] headroom");
}

std::vector<double> hann_window(int n) {
  check(n > 0, "hann_window: empty");
  std::vector<double> w(size_t(n), 0.0);
  for (int t = 0; t < n; ++t)
    w[size_t(t)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * double(t) / double(n)));
  return w;
}

Spectrogram stft(const Waveform& w, int fft_size, int hop) {
  check(fft_size > 0 && hop > 0, "stft: fft size and hop must be positive");
  check(fft_size <= w.length(), "stft: signal shorter than one window");
  int frames = frame_count(w.length(), fft_size, hop);
  int bins = fft_size / 2 + 1;
  Spectrogram out;
  out.fft_size = fft_size;
  out.hop = hop;
  out.window = fft_size;
  out.magnitudes = Tensor::zeros({frames, bins});
  std::vector<double> win = hann_window(fft_size);
  std::vector<cd> scratch, spec;
  for (int f = 0; f < frames; ++f) {
    frame_dft(w.samples.data() + size_t(f) * hop, win, fft_size, scratch, spec);
    float* row = out.magnitudes.row(f);
    for (int k = 0; k < bins; ++k) row[k] = float(std::abs(spec[size_t(k)]));
  }
  return out;
}

const std::vector<int>& spectral_loss_fft_sizes() {
  static const std::vector<int> sizes = {78, 126, 206, 334, 542, 876, 1418, 2296};
  return sizes;
}

int spectral_loss_hop(int fft_size) {
  return int(std::lround(double(fft_size) / 4.0));
}

namespace {

// Scales applicable to a given length; too-large FFT sizes are dropped so
// short clips still get a loss over the remaining scales.
std::vector<int> included_scales(int len) {
  std::vector<int> out;
  for (int s : spectral_loss_fft_sizes())
    if (s <= len) out.push_back(s);
  return out;
}

double scale_terms(const Tensor& sx, const Tensor& sy) {
  double l1 = 0.0, llog = 0.0;
  int64_t n = sx.numel();
  for (int64_t i = 0; i < n; ++i) {
    double a = double(sx.data[size_t(i)]);
    double b = double(sy.data[size_t(i)]);
    l1 += std::abs(a - b);
    llog += std::abs(std::log(a + kLogEps) - std::log(b + kLogEps));
  }
  return (l1 + llog) / double(n);
}

}  // namespace

double multiscale_stft_loss(const Waveform& x, const Waveform& y) {
  check(x.length() == y.length(), "spectral loss: length mismatch");
  std::vector<int> scales = included_scales(x.length());
  check(!scales.empty(), "spectral loss: signal too short for every scale");
  double total = 0.0;
  for (int s : scales) {
    int hop = spectral_loss_hop(s);
    total += scale_terms(stft(x, s, hop).magnitudes, stft(y, s, hop).magnitudes);
  }
  return total;
}

Tape<float>::CustomScalar multiscale_stft_op(Waveform ref) {
  check(!ref.samples.empty(), "spectral loss: empty reference");
  auto scales = std::make_shared<std::vector<ScaleRef>>();
  for (int s : included_scales(ref.length())) {
    ScaleRef sr;
    sr.fft_size = s;
    sr.hop = spectral_loss_hop(s);
    sr.mags = stft(ref, s, sr.hop).magnitudes;
    scales->push_back(std::move(sr));
  }
  check(!scales->empty(), "spectral loss: signal too short for every scale");
  int len = ref.length();
  int rate = ref.sample_rate;

  Tape<float>::CustomScalar op;
  op.name = "multiscale_stft";

  auto as_wave = [len, rate](const Tensor& v) {
    check(int64_t(len) == v.numel(), "spectral loss: length mismatch");
    Waveform w;
    w.sample_rate = rate;
    w.samples = v.data;
    return w;
  };

  op.forward = [scales, as_wave](const Tensor& v) {
    Waveform y = as_wave(v);
    double total = 0.0;
    for (const ScaleRef& sr : *scales)
      total += scale_terms(sr.mags, stft(y, sr.fft_size, sr.hop).magnitudes);
    return total;
  };

  op.backward = [scales, as_wave](const Tensor& v, double gout, Tensor& gin) {
    Waveform y = as_wave(v);
    for (const ScaleRef& sr : *scales) {
      int n = sr.fft_size, hop = sr.hop, bins = n / 2 + 1;
      int frames = frame_count(y.length(), n, hop);
      std::vector<double> win = hann_window(n);
      double inv_count = 1.0 / (double(frames) * double(bins));
      std::vector<cd> scratch, spec, gspec(size_t(n), cd(0.0, 0.0));
      for (int f = 0; f < frames; ++f) {
        const float* xp = y.samples.data() + size_t(f) * hop;
        frame_dft(xp, win, n, scratch, spec);
        std::fill(gspec.begin(), gspec.end(), cd(0.0, 0.0));
        const float* refrow = sr.mags.row(f);
        for (int k = 0; k < bins; ++k) {
          double m = std::abs(spec[size_t(k)]);
          double r = double(refrow[k]);
          double sgn = (m > r) ? 1.0 : (m < r ? -1.0 : 0.0);
          // d/dm of |m - r| + |log(m+eps) - log(r+eps)|
          double gm = sgn * (1.0 + 1.0 / (m + kLogEps)) * inv_count * gout;
          // d m / d spectrum = spectrum / m (zero magnitude has zero grad)
          if (m > 0.0) gspec[size_t(k)] = spec[size_t(k)] * (gm / m);
        }
        // dL/dy_t = w_t * Re(sum_k G_k e^{+2pi i k t / n}) over stored bins
        fft(gspec, true);
        float* gp = gin.data.data() + size_t(f) * hop;
        for (int t = 0; t < n; ++t)
          gp[t] += float(win[size_t(t)] * gspec[size_t(t)].real());
      }
    }
  };
  return op;
}

double sdr_db(const Waveform& ref, const Waveform& est) {
  check(ref.length() == est.length(), "sdr: length mismatch");
  double sig = 0.0, err = 0.0;
  for (int i = 0; i < ref.length(); ++i) {
    double r = double(ref.samples[size_t(i)]);
    double d = r - double(est.samples[size_t(i)]);
    sig += r * r;
    err += d * d;
  }
  check(sig > 0.0, "sdr: zero reference");
  if (err <= 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(sig / err));
}

double symbol_hz(int symbol) {
  return 220.0 * std::pow(2.0, double(symbol) / 12.0);
}

char symbol_char(int symbol) {
  check(symbol >= 0 && symbol < 32, "symbol_char: symbol out of range");
  return kSymbolAlphabet[symbol];
}

std::string lyric_string(const std::vector<int>& lyric) {
  std::string s;
  for (int v : lyric) s.push_back(symbol_char(v));
  return s;
}

std::vector<int> parse_lyric(const std::string& text, int vocab_size) {
  check(vocab_size >= 1 && vocab_size <= 32, "parse_lyric: bad vocab size");
  std::vector<int> out;
  for (char c : text) {
    const char* p = std::strchr(kSymbolAlphabet, c);
    check(p != nullptr && c != '\0', "parse_lyric: unknown symbol character");
    int s = int(p - kSymbolAlphabet);
    check(s < vocab_size, "parse_lyric: symbol outside the vocabulary");
    out.push_back(s);
  }
  check(!out.empty(), "parse_lyric: empty lyric");
  return out;
}

CorpusItem synth_item(const CorpusConfig& cfg, uint64_t corpus_seed, int id) {
  check(cfg.vocab_size >= 1 && cfg.vocab_size <= 32,
        "synth_item: vocab size must be in [1, 32]");
  check(cfg.symbols_per_item >= 1, "synth_item: empty lyric config");
  check(cfg.segment_s > 0.0, "synth_item: segment length must be positive");
  check(cfg.sample_rate > 0, "synth_item: bad sample rate");

  CorpusItem item;
  item.id = id;
  item.seed = Rng::mix(corpus_seed, uint64_t(id));
  item.duration_s = cfg.segment_s * cfg.symbols_per_item;
  Rng rng(item.seed);
  for (int i = 0; i < cfg.symbols_per_item; ++i)
    item.lyric.push_back(int(rng.uniform_int(cfg.vocab_size)));

  int total = int(std::lround(item.duration_s * cfg.sample_rate));
  item.waveform.sample_rate = cfg.sample_rate;
  item.waveform.samples.assign(size_t(total), 0.0f);

  double triad_amp =
      kToneAmp * std::pow(10.0, kTriadDb / 20.0) / std::sqrt(3.0);
  bool noise_on = cfg.noise_db > -180.0;
  double noise_std = noise_on ? kToneAmp * std::pow(10.0, cfg.noise_db / 20.0)
                              : 0.0;

  for (int i = 0; i < cfg.symbols_per_item; ++i) {
    int b0 = int(std::lround(double(i) * cfg.segment_s * cfg.sample_rate));
    int b1 = (i + 1 == cfg.symbols_per_item)
                 ? total
                 : int(std::lround(double(i + 1) * cfg.segment_s *
                                   cfg.sample_rate));
    double hz = symbol_hz(item.lyric[size_t(i)]);
    for (int t = b0; t < b1; ++t) {
      double u = double(t - b0) / cfg.sample_rate;  // time into the segment
      double env = std::min(u / kAttackS, 1.0) *
                   std::exp(-kDecayRate * std::max(0.0, u - kAttackS));
      item.waveform.samples[size_t(t)] +=
          float(kToneAmp * env * std::sin(2.0 * M_PI * hz * u));
    }
  }
  for (int t = 0; t < total; ++t) {
    double tt = double(t) / cfg.sample_rate;
    double acc = 0.0;
    for (double hz : kTriadHz) acc += std::sin(2.0 * M_PI * hz * tt);
    double v = double(item.waveform.samples[size_t(t)]) + triad_amp * acc;
    if (noise_on) v += noise_std * rng.normal();
    item.waveform.samples[size_t(t)] = float(v);
  }
  check_waveform(item.waveform, "synth_item");
  return item;
}

std::vector<CorpusItem> synth_corpus(const CorpusConfig& cfg, uint64_t seed) {
  check(cfg.n_items >= 1, "synth_corpus: need at least one item");
  std::vector<CorpusItem> items(size_t(cfg.n_items));
  parallel_map(cfg.n_items,
               [&](int i) { items[size_t(i)] = synth_item(cfg, seed, i); });
  return items;
}

void write_corpus(const std::string& dir, const std::vector<CorpusItem>& items,
                  int sample_rate) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream mf(fs::path(dir) / "manifest.txt");
  check(mf.good(), "write_corpus: cannot open manifest for writing");
  mf << "sample_rate " << sample_rate << "\n";
  for (const CorpusItem& it : items) {
    check(it.waveform.sample_rate == sample_rate,
          "write_corpus: item sample rate differs from the manifest");
    char name[32];
    std::snprintf(name, sizeof name, "item_%05d.f32", it.id);
    char dur[32];
    std::snprintf(dur, sizeof dur, "%.9g", it.duration_s);
    mf << it.id << " " << lyric_string(it.lyric) << " " << dur << " "
       << it.seed << " " << name << "\n";
    std::ofstream pf(fs::path(dir) / name, std::ios::binary);
    check(pf.good(), "write_corpus: cannot open item file for writing");
    // Raw little-endian float32 PCM; this build targets little-endian hosts.
    pf.write(reinterpret_cast<const char*>(it.waveform.samples.data()),
             std::streamsize(it.waveform.samples.size() * sizeof(float)));
    check(pf.good(), "write_corpus: short write");
  }
  mf.flush();
  check(mf.good(), "write_corpus: short manifest write");
}

LoadedCorpus load_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.txt");
  check(mf.good(), "load_corpus: missing manifest");
  LoadedCorpus out;
  std::string key;
  check(bool(mf >> key >> out.sample_rate) && key == "sample_rate" &&
            out.sample_rate > 0,
        "load_corpus: bad manifest header");
  int id;
  std::string lyric, path;
  double dur;
  uint64_t seed;
  while (mf >> id >> lyric >> dur >> seed >> path) {
    CorpusItem it;
    it.id = id;
    it.lyric = parse_lyric(lyric, 32);
    it.duration_s = dur;
    it.seed = seed;
    it.waveform.sample_rate = out.sample_rate;
    std::ifstream pf(fs::path(dir) / path, std::ios::binary | std::ios::ate);
    check(pf.good(), "load_corpus: missing item file " + path);
    auto bytes = int64_t(pf.tellg());
    check(bytes % int64_t(sizeof(float)) == 0,
          "load_corpus: item file size is not a float count");
    it.waveform.samples.assign(size_t(bytes / int64_t(sizeof(float))), 0.0f);
    pf.seekg(0);
    pf.read(reinterpret_cast<char*>(it.waveform.samples.data()), bytes);
    check(pf.good(), "load_corpus: short read on " + path);
    check_waveform(it.waveform, "load_corpus");
    out.items.push_back(std::move(it));
  }
  check(!out.items.empty(), "load_corpus: manifest lists no items");
  return out;
}

}  // namespace atck
