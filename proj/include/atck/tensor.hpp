// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <vector>

#include "atck/common.hpp"

namespace atck {

// Dense row-major tensor. Training and checkpoints use TensorT<float>; the
// double instantiation exists for the 64-bit gradient check mode.
template <class T>
struct TensorT {
  std::vector<int> dims;
  std::vector<T> data;

  TensorT() = default;

  static TensorT zeros(std::vector<int> d) {
    TensorT t;
    t.dims = std::move(d);
    t.data.assign(size_t(numel_of(t.dims)), T(0));
    return t;
  }

  static TensorT full(std::vector<int> d, T v) {
    TensorT t = zeros(std::move(d));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static TensorT scalar(T v) {
    TensorT t;
    t.dims = {1};
    t.data = {v};
    return t;
  }

  static TensorT from(std::vector<int> d, std::vector<T> vals) {
    TensorT t;
    t.dims = std::move(d);
    t.data = std::move(vals);
    check(int64_t(t.data.size()) == numel_of(t.dims),
          "Tensor::from: data size does not match dims");
    return t;
  }

  static int64_t numel_of(const std::vector<int>& d) {
    int64_t n = 1;
    for (int v : d) {
      check(v >= 0, "Tensor: negative dim");
      n *= v;
    }
    return n;
  }

  int rank() const { return int(dims.size()); }
  int dim(int i) const { return dims[size_t(i)]; }
  int64_t numel() const { return int64_t(data.size()); }

  int rows() const {
    check(rank() == 2, "Tensor::rows: rank != 2");
    return dims[0];
  }
  int cols() const {
    check(rank() == 2, "Tensor::cols: rank != 2");
    return dims[1];
  }
  T* row(int r) { return data.data() + size_t(r) * size_t(cols()); }
  const T* row(int r) const { return data.data() + size_t(r) * size_t(cols()); }

  bool same_shape(const TensorT& o) const { return dims == o.dims; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
    os << "]";
    return os.str();
  }
};

using Tensor = TensorT<float>;

template <class To, class From>
TensorT<To> cast_tensor(const TensorT<From>& a) {
  TensorT<To> out;
  out.dims = a.dims;
  out.data.resize(a.data.size());
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = To(a.data[i]);
  return out;
}

template <class T>
void fill_normal(TensorT<T>& t, Rng& rng, double mean, double stddev) {
  for (auto& v : t.data) v = T(rng.normal(mean, stddev));
}

}  // namespace atck
