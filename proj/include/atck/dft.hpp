// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <vector>

namespace atck {

// In-place complex FFT for arbitrary sizes: radix-2 for powers of two,
// Bluestein otherwise. inverse=true applies the conjugate transform without
// the 1/n normalization; callers scale when they need a true inverse.
// Everything runs in double with a fixed butterfly order, so results are
// reproducible bit for bit.
void fft(std::vector<std::complex<double>>& a, bool inverse);

}  // namespace atck
