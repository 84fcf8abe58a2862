// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#include "atck/rvq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace atck {

Codebook make_codebook(int layer_index, int k, int d) {
  check(k >= 2, "make_codebook: need at least two codewords");
  check(d >= 1, "make_codebook: bad dimension");
  Codebook cb;
  cb.layer_index = layer_index;
  cb.codewords = Tensor::zeros({k, d});
  cb.ema_counts = Tensor::zeros({k});
  cb.ema_sums = Tensor::zeros({k, d});
  return cb;
}

int TokenHierarchy::at(int layer, int t) const {
  check(layer >= 0 && layer < depth && t >= 0 && t < length,
        "TokenHierarchy: position out of range");
  return indices[size_t(layer) * length + t];
}

void TokenHierarchy::set(int layer, int t, int v) {
  check(layer >= 0 && layer < depth && t >= 0 && t < length,
        "TokenHierarchy: position out of range");
  check(v >= 0 && v < codebook_size, "TokenHierarchy: index out of range");
  indices[size_t(layer) * length + t] = v;
}

TokenHierarchy make_hierarchy(int depth, int length, int codebook_size) {
  check(depth >= 1 && length >= 1, "make_hierarchy: depth and length positive");
  check(codebook_size >= 2, "make_hierarchy: bad codebook size");
  TokenHierarchy h;
  h.depth = depth;
  h.length = length;
  h.codebook_size = codebook_size;
  h.indices.assign(size_t(depth) * length, 0);
  return h;
}

std::pair<std::vector<int>, Tensor> quantize_layer(const Tensor& residual,
                                                   const Codebook& cb) {
  check(cb.size() >= 2, "quantize_layer: empty codebook");
  check(residual.rank() == 2 && residual.cols() == cb.dim(),
        "quantize_layer: dim mismatch");
  int tau = residual.rows(), k = cb.size(), d = cb.dim();
  std::vector<int> idx(size_t(tau), 0);
  Tensor q = Tensor::zeros({tau, d});
  for (int t = 0; t < tau; ++t) {
    const float* r = residual.row(t);
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (int c = 0; c < k; ++c) {
      const float* cw = cb.codewords.row(c);
      double dist = 0.0;
      for (int j = 0; j < d; ++j) {
        double diff = double(r[j]) - double(cw[j]);
        dist += diff * diff;
      }
      if (dist < best) {  // strict: ties keep the lowest index
        best = dist;
        arg = c;
      }
    }
    idx[size_t(t)] = arg;
    const float* cw = cb.codewords.row(arg);
    std::copy(cw, cw + d, q.row(t));
  }
  return {std::move(idx), std::move(q)};
}

EncodeResult rvq_encode(const Tensor& z, const std::vector<Codebook>& books,
                        int n_layers) {
  check(n_layers >= 1 && n_layers <= int(books.size()),
        "rvq_encode: layer count out of range");
  check(z.rank() == 2, "rvq_encode: latents must be [frames, D]");
  EncodeResult out;
  out.hierarchy = make_hierarchy(n_layers, z.rows(), books[0].size());
  out.final_residual = z;
  for (int n = 0; n < n_layers; ++n) {
    auto [idx, q] = quantize_layer(out.final_residual, books[size_t(n)]);
    for (int t = 0; t < z.rows(); ++t) {
      out.hierarchy.set(n, t, idx[size_t(t)]);
      float* r = out.final_residual.row(t);
      const float* qr = q.row(t);
      for (int j = 0; j < z.cols(); ++j) r[j] -= qr[j];
    }
  }
  return out;
}

Tensor rvq_decode(const TokenHierarchy& h, const std::vector<Codebook>& books,
                  int up_to) {
  check(up_to >= 0 && up_to <= h.depth, "rvq_decode: layer count out of range");
  check(h.depth <= int(books.size()), "rvq_decode: not enough codebooks");
  int d = books.empty() ? 0 : books[0].dim();
  check(d > 0, "rvq_decode: missing codebooks");
  Tensor out = Tensor::zeros({h.length, d});
  for (int n = 0; n < up_to; ++n) {
    const Codebook& cb = books[size_t(n)];
    check(cb.dim() == d, "rvq_decode: dim mismatch across layers");
    for (int t = 0; t < h.length; ++t) {
      int idx = h.at(n, t);
      check(idx >= 0 && idx < cb.size(), "rvq_decode: index out of codebook range");
      const float* cw = cb.codewords.row(idx);
      float* o = out.row(t);
      for (int j = 0; j < d; ++j) o[j] += cw[j];
    }
  }
  return out;
}

void ema_update(Codebook& cb, const Tensor& vectors,
                const std::vector<int>& assignments, double gamma) {
  check(gamma >= 0.0 && gamma < 1.0, "ema_update: decay must be in [0, 1)");
  check(vectors.rank() == 2 && vectors.cols() == cb.dim(),
        "ema_update: dim mismatch");
  check(int(assignments.size()) == vectors.rows(),
        "ema_update: assignment count mismatch");
  int k = cb.size(), d = cb.dim();
  std::vector<double> n_k(size_t(k), 0.0);
  std::vector<double> s_k(size_t(k) * d, 0.0);
  for (int i = 0; i < vectors.rows(); ++i) {
    int a = assignments[size_t(i)];
    check(a >= 0 && a < k, "ema_update: assignment out of range");
    n_k[size_t(a)] += 1.0;
    const float* v = vectors.row(i);
    double* s = s_k.data() + size_t(a) * d;
    for (int j = 0; j < d; ++j) s[j] += double(v[j]);
  }
  for (int c = 0; c < k; ++c) {
    double count = gamma * double(cb.ema_counts.data[size_t(c)]) +
                   (1.0 - gamma) * n_k[size_t(c)];
    cb.ema_counts.data[size_t(c)] = float(count);
    float* sums = cb.ema_sums.row(c);
    float* cw = cb.codewords.row(c);
    const double* s = s_k.data() + size_t(c) * d;
    double denom = std::max(count, 1e-5);
    for (int j = 0; j < d; ++j) {
      double v = gamma * double(sums[j]) + (1.0 - gamma) * s[j];
      sums[j] = float(v);
      cw[j] = float(v / denom);
    }
  }
}

int reinit_dead_codes(Codebook& cb, double usage_threshold, const Tensor& batch,
                      Rng& rng) {
  check(batch.rank() == 2 && batch.rows() >= 1 && batch.cols() == cb.dim(),
        "reinit_dead_codes: batch must be nonempty [M, D]");
  int replaced = 0;
  for (int c = 0; c < cb.size(); ++c) {
    if (double(cb.ema_counts.data[size_t(c)]) >= usage_threshold) continue;
    const float* v = batch.row(int(rng.uniform_int(batch.rows())));
    float* cw = cb.codewords.row(c);
    float* sums = cb.ema_sums.row(c);
    for (int j = 0; j < cb.dim(); ++j) {
      cw[j] = v[j];
      sums[j] = v[j];
    }
    cb.ema_counts.data[size_t(c)] = 1.0f;
    ++replaced;
  }
  return replaced;
}

void kmeans_init(Codebook& cb, const Tensor& batch, Rng& rng) {
  check(batch.rank() == 2 && batch.rows() >= 1 && batch.cols() == cb.dim(),
        "kmeans_init: batch must be nonempty [M, D]");
  int k = cb.size(), d = cb.dim(), m = batch.rows();
  // distance-weighted seeding: each next center drawn proportionally to the
  // squared distance from the centers so far, so separated modes all get one
  auto sqdist = [&](const float* a, const float* b) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      double diff = double(a[j]) - double(b[j]);
      s += diff * diff;
    }
    return s;
  };
  std::vector<double> mindist(size_t(m), 0.0);
  int first = int(rng.uniform_int(m));
  std::copy(batch.row(first), batch.row(first) + d, cb.codewords.row(0));
  for (int i = 0; i < m; ++i)
    mindist[size_t(i)] = sqdist(batch.row(i), cb.codewords.row(0));
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : mindist) total += v;
    int pick;
    if (total <= 0.0) {
      pick = int(rng.uniform_int(m));  // fewer distinct rows than codes
    } else {
      double u = rng.uniform() * total;
      pick = m - 1;
      double prefix = 0.0;
      for (int i = 0; i < m; ++i) {
        prefix += mindist[size_t(i)];
        if (u < prefix) {
          pick = i;
          break;
        }
      }
    }
    std::copy(batch.row(pick), batch.row(pick) + d, cb.codewords.row(c));
    for (int i = 0; i < m; ++i)
      mindist[size_t(i)] =
          std::min(mindist[size_t(i)], sqdist(batch.row(i), cb.codewords.row(c)));
  }
  // one Lloyd pass
  auto [assign, q] = quantize_layer(batch, cb);
  (void)q;
  std::vector<double> n_k(size_t(k), 0.0);
  std::vector<double> s_k(size_t(k) * d, 0.0);
  for (int i = 0; i < m; ++i) {
    int a = assign[size_t(i)];
    n_k[size_t(a)] += 1.0;
    const float* v = batch.row(i);
    double* s = s_k.data() + size_t(a) * d;
    for (int j = 0; j < d; ++j) s[j] += double(v[j]);
  }
  for (int c = 0; c < k; ++c) {
    double count = n_k[size_t(c)];
    float* cw = cb.codewords.row(c);
    float* sums = cb.ema_sums.row(c);
    if (count > 0.0) {
      const double* s = s_k.data() + size_t(c) * d;
      for (int j = 0; j < d; ++j) cw[j] = float(s[j] / count);
    }
    // empty clusters keep their sampled vector with unit mass
    double mass = std::max(count, 1.0);
    cb.ema_counts.data[size_t(c)] = float(mass);
    for (int j = 0; j < d; ++j) sums[j] = float(mass * double(cw[j]));
  }
}

NodeId quantize_straight_through(Tape<float>& t, NodeId z, Tensor quantized) {
  return t.straight_through(z, std::move(quantized));
}

NodeId commitment_loss(Tape<float>& t, NodeId z, const Tensor& quantized,
                       double beta) {
  return t.scale(t.mean_sq(z, t.constant(quantized)), beta);
}

}  // namespace atck
