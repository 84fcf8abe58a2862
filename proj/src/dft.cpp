// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#include "atck/dft.hpp"

#include <cmath>

#include "atck/common.hpp"

namespace atck {

namespace {

using cd = std::complex<double>;

bool is_pow2(size_t n) { return n > 0 && (n & (n - 1)) == 0; }

void fft_pow2(std::vector<cd>& a, bool inverse) {
  size_t n = a.size();
  if (n <= 1) return;
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * M_PI / double(len) * (inverse ? 1.0 : -1.0);
    cd wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      cd w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        cd u = a[i + j];
        cd v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

struct BluesteinPlan {
  size_t n = 0, m = 0;
  std::vector<cd> chirp;    // exp(-i pi k^2 / n), k in [0, n)
  std::vector<cd> kernel_f; // FFT of the chirp convolution kernel, length m
};

const BluesteinPlan& plan_for(size_t n) {
  thread_local std::vector<BluesteinPlan> cache;
  for (const auto& p : cache)
    if (p.n == n) return p;
  BluesteinPlan p;
  p.n = n;
  size_t m = 1;
  while (m < 2 * n + 1) m <<= 1;
  p.m = m;
  p.chirp.resize(n);
  for (size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small for large n.
    double ang = M_PI * double((k * k) % (2 * n)) / double(n);
    p.chirp[k] = cd(std::cos(ang), -std::sin(ang));
  }
  std::vector<cd> b(m, cd(0.0, 0.0));
  b[0] = std::conj(p.chirp[0]);
  for (size_t k = 1; k < n; ++k) {
    b[k] = std::conj(p.chirp[k]);
    b[m - k] = std::conj(p.chirp[k]);
  }
  fft_pow2(b, false);
  p.kernel_f = std::move(b);
  cache.push_back(std::move(p));
  return cache.back();
}

void bluestein(std::vector<cd>& a, bool inverse) {
  size_t n = a.size();
  const BluesteinPlan& p = plan_for(n);
  std::vector<cd> x(p.m, cd(0.0, 0.0));
  if (inverse) {
    for (size_t k = 0; k < n; ++k) x[k] = std::conj(a[k]) * p.chirp[k];
  } else {
    for (size_t k = 0; k < n; ++k) x[k] = a[k] * p.chirp[k];
  }
  fft_pow2(x, false);
  for (size_t k = 0; k < p.m; ++k) x[k] *= p.kernel_f[k];
  fft_pow2(x, true);
  double inv_m = 1.0 / double(p.m);
  for (size_t k = 0; k < n; ++k) {
    cd v = x[k] * inv_m * p.chirp[k];
    a[k] = inverse ? std::conj(v) : v;
  }
}

}  // namespace

void fft(std::vector<std::complex<double>>& a, bool inverse) {
  if (a.size() <= 1) return;
  if (is_pow2(a.size())) {
    fft_pow2(a, inverse);
  } else {
    bluestein(a, inverse);
  }
}

}  // namespace atck
