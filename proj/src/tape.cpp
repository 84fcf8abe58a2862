// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#include "atck/tape.hpp"

#include <cmath>
#include <cstring>

namespace atck {

AttentionMask build_mask(MaskKind kind, int length, std::vector<uint8_t> pad) {
  check(length > 0, "build_mask: length must be positive");
  if (!pad.empty())
    check(int(pad.size()) == length, "build_mask: pad flag size mismatch");
  AttentionMask m;
  m.kind = kind;
  m.length = length;
  m.pad = std::move(pad);
  return m;
}

template <class T>
const char* Tape<T>::op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Matmul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Silu: return "silu";
    case Op::Softmax: return "softmax";
    case Op::LayerNorm: return "layer_norm";
    case Op::Embedding: return "embedding";
    case Op::ConcatRows: return "concat_rows";
    case Op::Rope: return "rope";
    case Op::Attention: return "attention";
    case Op::Conv1d: return "conv1d";
    case Op::Conv1dT: return "conv1d_transpose";
    case Op::CrossEntropy: return "cross_entropy";
    case Op::MeanAbs: return "mean_abs";
    case Op::MeanSq: return "mean_sq";
    case Op::StraightThrough: return "straight_through";
    case Op::WeightedSum: return "weighted_sum";
    case Op::Custom: return "custom";
  }
  return "?";
}

template <class T>
typename Tape<T>::Node& Tape<T>::at(NodeId id) {
  check(id >= 0 && id < NodeId(nodes_.size()), "Tape: node id out of range");
  return nodes_[size_t(id)];
}

template <class T>
const typename Tape<T>::Node& Tape<T>::at(NodeId id) const {
  check(id >= 0 && id < NodeId(nodes_.size()), "Tape: node id out of range");
  return nodes_[size_t(id)];
}

template <class T>
void Tape<T>::check_finite(const Node& n) const {
  for (T v : n.value.data) {
    if (!std::isfinite(double(v))) {
      fail(std::string("non-finite value produced by op '") + op_name(n.op) +
           "'" + (n.name.empty() ? "" : " (" + n.name + ")"));
    }
  }
}

template <class T>
NodeId Tape<T>::push(Node n) {
  for (NodeId in : n.in) n.requires_grad = n.requires_grad || at(in).requires_grad;
  if (n.op != Op::Leaf && n.op != Op::Constant) compute(n);
  check_finite(n);
  nodes_.push_back(std::move(n));
  NodeId id = NodeId(nodes_.size()) - 1;
  if (!nodes_.back().name.empty()) name_node(id, nodes_.back().name);
  return id;
}

template <class T>
NodeId Tape<T>::constant(Ten v, std::string name) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(v);
  n.name = std::move(name);
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::leaf(Ten v, std::string name) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(v);
  n.name = std::move(name);
  n.requires_grad = true;
  return push(std::move(n));
}

template <class T>
void Tape<T>::set_value(NodeId id, Ten v) {
  Node& n = at(id);
  check(n.op == Op::Leaf || n.op == Op::Constant,
        "set_value: only leaves and constants can be rebound");
  check(n.value.dims == v.dims, "set_value: shape mismatch, expected " +
                                    n.value.shape_str() + " got " + v.shape_str());
  n.value = std::move(v);
}

template <class T>
void Tape<T>::name_node(NodeId id, const std::string& name) {
  at(id).name = name;
  auto [it, fresh] = names_.emplace(name, id);
  check(fresh, "Tape: duplicate node name '" + name + "'");
  named_order_.push_back(name);
}

template <class T>
NodeId Tape<T>::node_by_name(const std::string& name) const {
  auto it = names_.find(name);
  return it == names_.end() ? NodeId(-1) : it->second;
}

template <class T>
const typename Tape<T>::Ten& Tape<T>::val(NodeId id) const {
  return at(id).value;
}

template <class T>
bool Tape<T>::requires_grad(NodeId id) const {
  return at(id).requires_grad;
}

template <class T>
const typename Tape<T>::Ten& Tape<T>::grad(NodeId id) const {
  const Node& n = at(id);
  check(n.requires_grad, "grad: node is detached from the gradient graph");
  check(!n.grad.data.empty(), "grad: backward has not run over this node");
  return n.grad;
}

template <class T>
typename Tape<T>::Ten* Tape<T>::grad_of(NodeId id) {
  Node& n = at(id);
  if (!n.requires_grad) return nullptr;
  if (n.grad.data.empty()) n.grad = Ten::zeros(n.value.dims);
  return &n.grad;
}

template <class T>
void Tape<T>::zero_grad() {
  for (Node& n : nodes_)
    if (!n.grad.data.empty())
      std::fill(n.grad.data.begin(), n.grad.data.end(), T(0));
}

// ---- op builders ----

template <class T>
NodeId Tape<T>::matmul(NodeId a, NodeId b) {
  const Ten& A = val(a);
  const Ten& B = val(b);
  check(A.rank() == 2 && B.rank() == 2, "matmul: both inputs must be rank 2");
  check(A.cols() == B.rows(), "matmul: inner dims differ, " + A.shape_str() +
                                  " x " + B.shape_str());
  Node n;
  n.op = Op::Matmul;
  n.in = {a, b};
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::add(NodeId a, NodeId b) {
  const Ten& A = val(a);
  const Ten& B = val(b);
  bool bc = B.rank() == 1 && A.rank() == 2 && A.cols() == B.dim(0);
  check(A.dims == B.dims || bc, "add: shape mismatch " + A.shape_str() + " vs " +
                                    B.shape_str());
  Node n;
  n.op = Op::Add;
  n.in = {a, b};
  n.i0 = bc ? 1 : 0;
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::sub(NodeId a, NodeId b) {
  check(val(a).dims == val(b).dims, "sub: shape mismatch");
  Node n;
  n.op = Op::Sub;
  n.in = {a, b};
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::mul(NodeId a, NodeId b) {
  check(val(a).dims == val(b).dims, "mul: shape mismatch");
  Node n;
  n.op = Op::Mul;
  n.in = {a, b};
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::scale(NodeId a, double s) {
  Node n;
  n.op = Op::Scale;
  n.in = {a};
  n.f0 = s;
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::silu(NodeId a) {
  Node n;
  n.op = Op::Silu;
  n.in = {a};
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::softmax_rows(NodeId a) {
  check(val(a).rank() == 2, "softmax: input must be rank 2");
  Node n;
  n.op = Op::Softmax;
  n.in = {a};
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
  const Ten& X = val(x);
  check(X.rank() == 2, "layer_norm: input must be rank 2");
  check(val(gamma).rank() == 1 && val(gamma).dim(0) == X.cols(),
        "layer_norm: gamma shape mismatch");
  check(val(beta).rank() == 1 && val(beta).dim(0) == X.cols(),
        "layer_norm: beta shape mismatch");
  Node n;
  n.op = Op::LayerNorm;
  n.in = {x, gamma, beta};
  n.f0 = eps;
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::embedding(NodeId table, std::vector<int> ids) {
  const Ten& Tab = val(table);
  check(Tab.rank() == 2, "embedding: table must be rank 2");
  for (int id : ids)
    check(id >= 0 && id < Tab.rows(), "embedding: unknown token id " +
                                          std::to_string(id));
  Node n;
  n.op = Op::Embedding;
  n.in = {table};
  n.ivec = std::move(ids);
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::concat_rows(std::vector<NodeId> parts) {
  check(!parts.empty(), "concat_rows: no inputs");
  int cols = val(parts[0]).cols();
  for (NodeId p : parts)
    check(val(p).rank() == 2 && val(p).cols() == cols,
          "concat_rows: column mismatch");
  Node n;
  n.op = Op::ConcatRows;
  n.in = std::move(parts);
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::rope(NodeId x, int n_heads, double base) {
  const Ten& X = val(x);
  check(X.rank() == 2, "rope: input must be rank 2");
  check(n_heads > 0 && X.cols() % n_heads == 0, "rope: head split mismatch");
  check((X.cols() / n_heads) % 2 == 0, "rope: head_dim must be even");
  Node n;
  n.op = Op::Rope;
  n.in = {x};
  n.i0 = n_heads;
  n.f0 = base;
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::attention(NodeId q, NodeId k, NodeId v, int n_heads,
                          int n_kv_heads, const AttentionMask& mask) {
  const Ten& Q = val(q);
  const Ten& K = val(k);
  const Ten& V = val(v);
  check(Q.rank() == 2 && K.rank() == 2 && V.rank() == 2,
        "attention: inputs must be rank 2");
  check(n_heads > 0 && n_kv_heads > 0 && n_heads % n_kv_heads == 0,
        "attention: n_heads must be a multiple of n_kv_heads");
  check(Q.cols() % n_heads == 0, "attention: q head split mismatch");
  int hd = Q.cols() / n_heads;
  check(K.cols() == n_kv_heads * hd && V.cols() == n_kv_heads * hd,
        "attention: k/v head split mismatch");
  check(Q.rows() == K.rows() && K.rows() == V.rows(),
        "attention: sequence length mismatch");
  check(mask.length == Q.rows(), "attention: mask length mismatch");
  Node n;
  n.op = Op::Attention;
  n.in = {q, k, v};
  n.i0 = n_heads;
  n.i1 = n_kv_heads;
  n.i2 = mask.kind == MaskKind::Causal ? 0 : 1;
  n.bvec = mask.pad;
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::conv1d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
  const Ten& X = val(x);
  const Ten& W = val(w);
  check(X.rank() == 2, "conv1d: input must be rank 2 [T, Cin]");
  check(W.rank() == 3, "conv1d: weight must be rank 3 [K, Cin, Cout]");
  check(W.dim(1) == X.cols(), "conv1d: channel mismatch");
  check(val(b).rank() == 1 && val(b).dim(0) == W.dim(2),
        "conv1d: bias shape mismatch");
  check(stride > 0 && pad >= 0, "conv1d: bad stride/pad");
  check(X.rows() + 2 * pad >= W.dim(0), "conv1d: input shorter than kernel");
  Node n;
  n.op = Op::Conv1d;
  n.in = {x, w, b};
  n.i0 = stride;
  n.i1 = pad;
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::conv1d_transpose(NodeId x, NodeId w, NodeId b, int stride,
                                 int pad) {
  const Ten& X = val(x);
  const Ten& W = val(w);
  check(X.rank() == 2, "conv1d_transpose: input must be rank 2 [T, Cin]");
  check(W.rank() == 3, "conv1d_transpose: weight must be rank 3 [K, Cin, Cout]");
  check(W.dim(1) == X.cols(), "conv1d_transpose: channel mismatch");
  check(val(b).rank() == 1 && val(b).dim(0) == W.dim(2),
        "conv1d_transpose: bias shape mismatch");
  check(stride > 0 && pad >= 0, "conv1d_transpose: bad stride/pad");
  check((X.rows() - 1) * stride + W.dim(0) - 2 * pad > 0,
        "conv1d_transpose: empty output");
  Node n;
  n.op = Op::Conv1dT;
  n.in = {x, w, b};
  n.i0 = stride;
  n.i1 = pad;
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::cross_entropy(NodeId logits, std::vector<int> targets,
                              std::vector<uint8_t> loss_mask,
                              std::vector<Range> blocks) {
  const Ten& L = val(logits);
  check(L.rank() == 2, "cross_entropy: logits must be rank 2");
  int rows = L.rows(), V = L.cols();
  check(int(targets.size()) == rows && int(loss_mask.size()) == rows &&
            int(blocks.size()) == rows,
        "cross_entropy: row count mismatch");
  int m = 0;
  for (int t = 0; t < rows; ++t) {
    if (!loss_mask[size_t(t)]) continue;
    ++m;
    const Range& blk = blocks[size_t(t)];
    check(blk.lo >= 0 && blk.hi <= V && blk.lo < blk.hi,
          "cross_entropy: block out of vocab range");
    check(blk.contains(targets[size_t(t)]),
          "cross_entropy: target outside block at row " + std::to_string(t));
  }
  check(m > 0, "cross_entropy: empty loss mask");
  Node n;
  n.op = Op::CrossEntropy;
  n.in = {logits};
  n.ivec = std::move(targets);
  n.bvec = std::move(loss_mask);
  n.ranges = std::move(blocks);
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::mean_abs(NodeId a, NodeId b) {
  check(val(a).dims == val(b).dims, "mean_abs: shape mismatch");
  check(val(a).numel() > 0, "mean_abs: empty input");
  Node n;
  n.op = Op::MeanAbs;
  n.in = {a, b};
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::mean_sq(NodeId a, NodeId b) {
  check(val(a).dims == val(b).dims, "mean_sq: shape mismatch");
  check(val(a).numel() > 0, "mean_sq: empty input");
  Node n;
  n.op = Op::MeanSq;
  n.in = {a, b};
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::straight_through(NodeId z, Ten quantized) {
  check(val(z).dims == quantized.dims, "straight_through: shape mismatch");
  NodeId q = constant(std::move(quantized));
  Node n;
  n.op = Op::StraightThrough;
  n.in = {z, q};
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::weighted_sum(std::vector<NodeId> xs, std::vector<double> ws) {
  check(!xs.empty() && xs.size() == ws.size(), "weighted_sum: arity mismatch");
  for (NodeId x : xs)
    check(val(x).numel() == 1, "weighted_sum: inputs must be scalars");
  Node n;
  n.op = Op::WeightedSum;
  n.in = std::move(xs);
  n.dvec = std::move(ws);
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::custom_scalar(NodeId x, CustomScalar op) {
  check(bool(op.forward) && bool(op.backward),
        "custom_scalar: missing forward/backward");
  Node n;
  n.op = Op::Custom;
  n.in = {x};
  n.custom = std::make_shared<CustomScalar>(std::move(op));
  n.name = n.custom->name;
  return push(std::move(n));
}

// ---- kernels ----

namespace {

template <class T>
TensorT<T> transpose2d(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros({a.cols(), a.rows()});
  for (int i = 0; i < a.rows(); ++i) {
    const T* src = a.row(i);
    for (int j = 0; j < a.cols(); ++j) out.data[size_t(j) * a.rows() + i] = src[j];
  }
  return out;
}

// C += A * B with the reduction ascending over k for every output element.
template <class T>
void mm_acc(const TensorT<T>& A, const TensorT<T>& B, TensorT<T>& C) {
  int m = A.rows(), kk = A.cols(), nn = B.cols();
  for (int i = 0; i < m; ++i) {
    T* c = C.row(i);
    const T* arow = A.row(i);
    for (int k = 0; k < kk; ++k) {
      T a = arow[k];
      const T* b = B.row(k);
      for (int j = 0; j < nn; ++j) c[j] += a * b[j];
    }
  }
}

template <class T>
inline double sigmoid(T x) {
  return 1.0 / (1.0 + std::exp(-double(x)));
}

}  // namespace

template <class T>
void Tape<T>::compute(Node& n) {
  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      return;
    case Op::Matmul: {
      const Ten& A = val(n.in[0]);
      const Ten& B = val(n.in[1]);
      n.value = Ten::zeros({A.rows(), B.cols()});
      mm_acc(A, B, n.value);
      return;
    }
    case Op::Add: {
      const Ten& A = val(n.in[0]);
      const Ten& B = val(n.in[1]);
      n.value = A;
      if (n.i0) {
        int cols = B.dim(0);
        int rows = int(A.numel() / cols);
        for (int r = 0; r < rows; ++r) {
          T* out = n.value.data.data() + size_t(r) * cols;
          for (int c = 0; c < cols; ++c) out[c] += B.data[size_t(c)];
        }
      } else {
        for (size_t i = 0; i < A.data.size(); ++i) n.value.data[i] += B.data[i];
      }
      return;
    }
    case Op::Sub: {
      const Ten& A = val(n.in[0]);
      const Ten& B = val(n.in[1]);
      n.value = A;
      for (size_t i = 0; i < A.data.size(); ++i) n.value.data[i] -= B.data[i];
      return;
    }
    case Op::Mul: {
      const Ten& A = val(n.in[0]);
      const Ten& B = val(n.in[1]);
      n.value = A;
      for (size_t i = 0; i < A.data.size(); ++i) n.value.data[i] *= B.data[i];
      return;
    }
    case Op::Scale: {
      const Ten& A = val(n.in[0]);
      n.value = A;
      T s = T(n.f0);
      for (auto& v : n.value.data) v *= s;
      return;
    }
    case Op::Silu: {
      const Ten& A = val(n.in[0]);
      n.value = A;
      for (size_t i = 0; i < A.data.size(); ++i) {
        double x = double(A.data[i]);
        n.value.data[i] = T(x * sigmoid(A.data[i]));
      }
      return;
    }
    case Op::Softmax: {
      const Ten& A = val(n.in[0]);
      n.value = Ten::zeros(A.dims);
      int rows = A.rows(), cols = A.cols();
      for (int r = 0; r < rows; ++r) {
        const T* x = A.row(r);
        T* y = n.value.row(r);
        double maxv = double(x[0]);
        for (int c = 1; c < cols; ++c) maxv = std::max(maxv, double(x[c]));
        double denom = 0.0;
        for (int c = 0; c < cols; ++c) denom += std::exp(double(x[c]) - maxv);
        for (int c = 0; c < cols; ++c)
          y[c] = T(std::exp(double(x[c]) - maxv) / denom);
      }
      return;
    }
    case Op::LayerNorm: {
      const Ten& X = val(n.in[0]);
      const Ten& G = val(n.in[1]);
      const Ten& B = val(n.in[2]);
      int rows = X.rows(), cols = X.cols();
      n.value = Ten::zeros(X.dims);
      n.daux.assign(size_t(rows) * 2, 0.0);
      for (int r = 0; r < rows; ++r) {
        const T* x = X.row(r);
        T* y = n.value.row(r);
        double mean = 0.0;
        for (int c = 0; c < cols; ++c) mean += double(x[c]);
        mean /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) {
          double d = double(x[c]) - mean;
          var += d * d;
        }
        var /= cols;
        double inv = 1.0 / std::sqrt(var + n.f0);
        n.daux[size_t(r) * 2] = mean;
        n.daux[size_t(r) * 2 + 1] = inv;
        for (int c = 0; c < cols; ++c) {
          double xh = (double(x[c]) - mean) * inv;
          y[c] = T(xh * double(G.data[size_t(c)]) + double(B.data[size_t(c)]));
        }
      }
      return;
    }
    case Op::Embedding: {
      const Ten& Tab = val(n.in[0]);
      int cols = Tab.cols();
      n.value = Ten::zeros({int(n.ivec.size()), cols});
      for (size_t t = 0; t < n.ivec.size(); ++t)
        std::memcpy(n.value.data.data() + t * size_t(cols),
                    Tab.row(n.ivec[t]), sizeof(T) * size_t(cols));
      return;
    }
    case Op::ConcatRows: {
      int cols = val(n.in[0]).cols();
      int rows = 0;
      for (NodeId p : n.in) rows += val(p).rows();
      n.value = Ten::zeros({rows, cols});
      int at_row = 0;
      for (NodeId p : n.in) {
        const Ten& P = val(p);
        std::memcpy(n.value.row(at_row), P.data.data(),
                    sizeof(T) * P.data.size());
        at_row += P.rows();
      }
      return;
    }
    case Op::Rope: {
      const Ten& X = val(n.in[0]);
      int rows = X.rows(), cols = X.cols();
      int heads = n.i0, hd = cols / heads;
      n.value = X;
      for (int t = 0; t < rows; ++t) {
        T* y = n.value.row(t);
        for (int h = 0; h < heads; ++h) {
          T* head = y + h * hd;
          for (int i = 0; i < hd / 2; ++i) {
            double theta = double(t) * std::pow(n.f0, -2.0 * i / hd);
            double c = std::cos(theta), s = std::sin(theta);
            double a = double(head[2 * i]), b = double(head[2 * i + 1]);
            head[2 * i] = T(a * c - b * s);
            head[2 * i + 1] = T(a * s + b * c);
          }
        }
      }
      return;
    }
    case Op::Attention: {
      const Ten& Q = val(n.in[0]);
      const Ten& K = val(n.in[1]);
      const Ten& V = val(n.in[2]);
      int rows = Q.rows();
      int heads = n.i0, kv_heads = n.i1;
      int hd = Q.cols() / heads;
      int group = heads / kv_heads;
      double sc = 1.0 / std::sqrt(double(hd));
      bool causal = n.i2 == 0;
      const std::vector<uint8_t>& pad = n.bvec;
      auto padded = [&](int i) { return !pad.empty() && pad[size_t(i)]; };
      n.value = Ten::zeros({rows, heads * hd});
      n.aux = Ten::zeros({heads, rows, rows});
      std::vector<double> scores(size_t(rows), 0.0);
      std::vector<double> acc(size_t(hd), 0.0);
      for (int h = 0; h < heads; ++h) {
        int kvh = h / group;
        T* probs = n.aux.data.data() + size_t(h) * rows * rows;
        for (int i = 0; i < rows; ++i) {
          if (padded(i)) continue;
          int jmax = causal ? i : rows - 1;
          double maxv = -1e300;
          for (int j = 0; j <= jmax; ++j) {
            if (padded(j)) continue;
            const T* qr = Q.row(i) + h * hd;
            const T* kr = K.row(j) + kvh * hd;
            double dot = 0.0;
            for (int d = 0; d < hd; ++d) dot += double(qr[d]) * double(kr[d]);
            scores[size_t(j)] = dot * sc;
            maxv = std::max(maxv, scores[size_t(j)]);
          }
          double denom = 0.0;
          for (int j = 0; j <= jmax; ++j) {
            if (padded(j)) continue;
            denom += std::exp(scores[size_t(j)] - maxv);
          }
          std::fill(acc.begin(), acc.end(), 0.0);
          T* prow = probs + size_t(i) * rows;
          for (int j = 0; j <= jmax; ++j) {
            if (padded(j)) continue;
            double p = std::exp(scores[size_t(j)] - maxv) / denom;
            prow[j] = T(p);
            const T* vr = V.row(j) + kvh * hd;
            for (int d = 0; d < hd; ++d) acc[size_t(d)] += p * double(vr[d]);
          }
          T* out = n.value.row(i) + h * hd;
          for (int d = 0; d < hd; ++d) out[d] = T(acc[size_t(d)]);
        }
      }
      return;
    }
    case Op::Conv1d: {
      const Ten& X = val(n.in[0]);
      const Ten& W = val(n.in[1]);
      const Ten& B = val(n.in[2]);
      int tin = X.rows(), cin = X.cols();
      int kk = W.dim(0), cout = W.dim(2);
      int stride = n.i0, pad = n.i1;
      int tout = (tin + 2 * pad - kk) / stride + 1;
      n.value = Ten::zeros({tout, cout});
      for (int tp = 0; tp < tout; ++tp) {
        T* out = n.value.row(tp);
        for (int co = 0; co < cout; ++co) out[co] = B.data[size_t(co)];
        for (int k = 0; k < kk; ++k) {
          int t = tp * stride + k - pad;
          if (t < 0 || t >= tin) continue;
          const T* x = X.row(t);
          for (int ci = 0; ci < cin; ++ci) {
            T a = x[ci];
            const T* wr = W.data.data() + (size_t(k) * cin + ci) * cout;
            for (int co = 0; co < cout; ++co) out[co] += a * wr[co];
          }
        }
      }
      return;
    }
    case Op::Conv1dT: {
      const Ten& X = val(n.in[0]);
      const Ten& W = val(n.in[1]);
      const Ten& B = val(n.in[2]);
      int tin = X.rows(), cin = X.cols();
      int kk = W.dim(0), cout = W.dim(2);
      int stride = n.i0, pad = n.i1;
      int tout = (tin - 1) * stride + kk - 2 * pad;
      n.value = Ten::zeros({tout, cout});
      for (int tp = 0; tp < tout; ++tp) {
        T* out = n.value.row(tp);
        for (int co = 0; co < cout; ++co) out[co] = B.data[size_t(co)];
      }
      for (int t = 0; t < tin; ++t) {
        const T* x = X.row(t);
        for (int k = 0; k < kk; ++k) {
          int tp = t * stride + k - pad;
          if (tp < 0 || tp >= tout) continue;
          T* out = n.value.row(tp);
          for (int ci = 0; ci < cin; ++ci) {
            T a = x[ci];
            const T* wr = W.data.data() + (size_t(k) * cin + ci) * cout;
            for (int co = 0; co < cout; ++co) out[co] += a * wr[co];
          }
        }
      }
      return;
    }
    case Op::CrossEntropy: {
      const Ten& L = val(n.in[0]);
      int rows = L.rows();
      n.daux.assign(size_t(rows), 0.0);
      int m = 0;
      double total = 0.0;
      for (int t = 0; t < rows; ++t) {
        if (!n.bvec[size_t(t)]) continue;
        const Range& blk = n.ranges[size_t(t)];
        const T* l = L.row(t);
        double maxv = -1e300;
        for (int j = blk.lo; j < blk.hi; ++j) maxv = std::max(maxv, double(l[j]));
        double denom = 0.0;
        for (int j = blk.lo; j < blk.hi; ++j)
          denom += std::exp(double(l[j]) - maxv);
        double lse = maxv + std::log(denom);
        n.daux[size_t(t)] = lse;
        total += lse - double(l[n.ivec[size_t(t)]]);
        ++m;
      }
      n.value = Ten::scalar(T(total / m));
      return;
    }
    case Op::MeanAbs: {
      const Ten& A = val(n.in[0]);
      const Ten& B = val(n.in[1]);
      double total = 0.0;
      for (size_t i = 0; i < A.data.size(); ++i)
        total += std::abs(double(A.data[i]) - double(B.data[i]));
      n.value = Ten::scalar(T(total / double(A.numel())));
      return;
    }
    case Op::MeanSq: {
      const Ten& A = val(n.in[0]);
      const Ten& B = val(n.in[1]);
      double total = 0.0;
      for (size_t i = 0; i < A.data.size(); ++i) {
        double d = double(A.data[i]) - double(B.data[i]);
        total += d * d;
      }
      n.value = Ten::scalar(T(total / double(A.numel())));
      return;
    }
    case Op::StraightThrough: {
      n.value = val(n.in[1]);
      return;
    }
    case Op::WeightedSum: {
      double total = 0.0;
      for (size_t i = 0; i < n.in.size(); ++i)
        total += n.dvec[i] * double(val(n.in[i]).data[0]);
      n.value = Ten::scalar(T(total));
      return;
    }
    case Op::Custom: {
      n.value = Ten::scalar(T(n.custom->forward(val(n.in[0]))));
      return;
    }
  }
}

template <class T>
void Tape<T>::backprop(Node& n) {
  if (n.grad.data.empty()) return;  // no gradient flowed into this node
  const Ten& g = n.grad;
  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      return;
    case Op::Matmul: {
      const Ten& A = val(n.in[0]);
      const Ten& B = val(n.in[1]);
      if (Ten* ga = grad_of(n.in[0])) {
        Ten bt = transpose2d(B);
        mm_acc(g, bt, *ga);
      }
      if (Ten* gb = grad_of(n.in[1])) {
        Ten at = transpose2d(A);
        mm_acc(at, g, *gb);
      }
      return;
    }
    case Op::Add: {
      if (Ten* ga = grad_of(n.in[0]))
        for (size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i];
      if (Ten* gb = grad_of(n.in[1])) {
        if (n.i0) {
          int cols = int(gb->data.size());
          int rows = int(g.numel()) / cols;
          for (int r = 0; r < rows; ++r) {
            const T* gr = g.data.data() + size_t(r) * cols;
            for (int c = 0; c < cols; ++c) gb->data[size_t(c)] += gr[c];
          }
        } else {
          for (size_t i = 0; i < g.data.size(); ++i) gb->data[i] += g.data[i];
        }
      }
      return;
    }
    case Op::Sub: {
      if (Ten* ga = grad_of(n.in[0]))
        for (size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i];
      if (Ten* gb = grad_of(n.in[1]))
        for (size_t i = 0; i < g.data.size(); ++i) gb->data[i] -= g.data[i];
      return;
    }
    case Op::Mul: {
      const Ten& A = val(n.in[0]);
      const Ten& B = val(n.in[1]);
      if (Ten* ga = grad_of(n.in[0]))
        for (size_t i = 0; i < g.data.size(); ++i)
          ga->data[i] += g.data[i] * B.data[i];
      if (Ten* gb = grad_of(n.in[1]))
        for (size_t i = 0; i < g.data.size(); ++i)
          gb->data[i] += g.data[i] * A.data[i];
      return;
    }
    case Op::Scale: {
      if (Ten* ga = grad_of(n.in[0])) {
        T s = T(n.f0);
        for (size_t i = 0; i < g.data.size(); ++i) ga->data[i] += s * g.data[i];
      }
      return;
    }
    case Op::Silu: {
      const Ten& A = val(n.in[0]);
      if (Ten* ga = grad_of(n.in[0])) {
        for (size_t i = 0; i < g.data.size(); ++i) {
          double x = double(A.data[i]);
          double s = sigmoid(A.data[i]);
          ga->data[i] += T(double(g.data[i]) * (s * (1.0 + x * (1.0 - s))));
        }
      }
      return;
    }
    case Op::Softmax: {
      const Ten& Y = n.value;
      if (Ten* ga = grad_of(n.in[0])) {
        int rows = Y.rows(), cols = Y.cols();
        for (int r = 0; r < rows; ++r) {
          const T* y = Y.row(r);
          const T* gr = g.row(r);
          T* gx = ga->row(r);
          double dot = 0.0;
          for (int c = 0; c < cols; ++c) dot += double(y[c]) * double(gr[c]);
          for (int c = 0; c < cols; ++c)
            gx[c] += T(double(y[c]) * (double(gr[c]) - dot));
        }
      }
      return;
    }
    case Op::LayerNorm: {
      const Ten& X = val(n.in[0]);
      const Ten& G = val(n.in[1]);
      int rows = X.rows(), cols = X.cols();
      Ten* gx = grad_of(n.in[0]);
      Ten* gg = grad_of(n.in[1]);
      Ten* gb = grad_of(n.in[2]);
      for (int r = 0; r < rows; ++r) {
        const T* x = X.row(r);
        const T* gr = g.row(r);
        double mean = n.daux[size_t(r) * 2];
        double inv = n.daux[size_t(r) * 2 + 1];
        double sum_gy = 0.0, sum_gyx = 0.0;
        for (int c = 0; c < cols; ++c) {
          double xh = (double(x[c]) - mean) * inv;
          double gyc = double(gr[c]) * double(G.data[size_t(c)]);
          sum_gy += gyc;
          sum_gyx += gyc * xh;
          if (gg) gg->data[size_t(c)] += T(double(gr[c]) * xh);
          if (gb) gb->data[size_t(c)] += gr[c];
        }
        if (gx) {
          T* gxr = gx->row(r);
          for (int c = 0; c < cols; ++c) {
            double xh = (double(x[c]) - mean) * inv;
            double gyc = double(gr[c]) * double(G.data[size_t(c)]);
            gxr[c] += T(inv * (gyc - sum_gy / cols - xh * sum_gyx / cols));
          }
        }
      }
      return;
    }
    case Op::Embedding: {
      if (Ten* gt = grad_of(n.in[0])) {
        int cols = gt->cols();
        for (size_t t = 0; t < n.ivec.size(); ++t) {
          T* dst = gt->row(n.ivec[t]);
          const T* src = g.data.data() + t * size_t(cols);
          for (int c = 0; c < cols; ++c) dst[c] += src[c];
        }
      }
      return;
    }
    case Op::ConcatRows: {
      int at_row = 0;
      for (NodeId p : n.in) {
        const Ten& P = val(p);
        if (Ten* gp = grad_of(p)) {
          const T* src = g.row(at_row);
          for (size_t i = 0; i < P.data.size(); ++i) gp->data[i] += src[i];
        }
        at_row += P.rows();
      }
      return;
    }
    case Op::Rope: {
      if (Ten* gx = grad_of(n.in[0])) {
        int rows = g.rows(), cols = g.cols();
        int heads = n.i0, hd = cols / heads;
        for (int t = 0; t < rows; ++t) {
          const T* gr = g.row(t);
          T* gxr = gx->row(t);
          for (int h = 0; h < heads; ++h) {
            const T* ghead = gr + h * hd;
            T* ghx = gxr + h * hd;
            for (int i = 0; i < hd / 2; ++i) {
              double theta = double(t) * std::pow(n.f0, -2.0 * i / hd);
              double c = std::cos(theta), s = std::sin(theta);
              double ga = double(ghead[2 * i]), gb = double(ghead[2 * i + 1]);
              ghx[2 * i] += T(ga * c + gb * s);
              ghx[2 * i + 1] += T(-ga * s + gb * c);
            }
          }
        }
      }
      return;
    }
    case Op::Attention: {
      const Ten& Q = val(n.in[0]);
      const Ten& K = val(n.in[1]);
      const Ten& V = val(n.in[2]);
      Ten* gq = grad_of(n.in[0]);
      Ten* gk = grad_of(n.in[1]);
      Ten* gv = grad_of(n.in[2]);
      int rows = Q.rows();
      int heads = n.i0, kv_heads = n.i1;
      int hd = Q.cols() / heads;
      int group = heads / kv_heads;
      double sc = 1.0 / std::sqrt(double(hd));
      bool causal = n.i2 == 0;
      const std::vector<uint8_t>& pad = n.bvec;
      auto padded = [&](int i) { return !pad.empty() && pad[size_t(i)]; };
      std::vector<double> dp(size_t(rows), 0.0), ds(size_t(rows), 0.0),
          accq(size_t(hd), 0.0);
      for (int h = 0; h < heads; ++h) {
        int kvh = h / group;
        const T* probs = n.aux.data.data() + size_t(h) * rows * rows;
        for (int i = 0; i < rows; ++i) {
          if (padded(i)) continue;
          const T* prow = probs + size_t(i) * rows;
          const T* go = g.row(i) + h * hd;
          int jmax = causal ? i : rows - 1;
          double dot = 0.0;
          for (int j = 0; j <= jmax; ++j) {
            if (padded(j)) continue;
            const T* vr = V.row(j) + kvh * hd;
            double d = 0.0;
            for (int dd = 0; dd < hd; ++dd) d += double(go[dd]) * double(vr[dd]);
            dp[size_t(j)] = d;
            dot += double(prow[j]) * d;
          }
          for (int j = 0; j <= jmax; ++j) {
            if (padded(j)) continue;
            ds[size_t(j)] = double(prow[j]) * (dp[size_t(j)] - dot);
          }
          if (gv) {
            for (int j = 0; j <= jmax; ++j) {
              if (padded(j)) continue;
              T* gvr = gv->row(j) + kvh * hd;
              double p = double(prow[j]);
              for (int dd = 0; dd < hd; ++dd)
                gvr[dd] += T(p * double(go[dd]));
            }
          }
          if (gq) {
            std::fill(accq.begin(), accq.end(), 0.0);
            for (int j = 0; j <= jmax; ++j) {
              if (padded(j)) continue;
              const T* kr = K.row(j) + kvh * hd;
              for (int dd = 0; dd < hd; ++dd)
                accq[size_t(dd)] += ds[size_t(j)] * double(kr[dd]);
            }
            T* gqr = gq->row(i) + h * hd;
            for (int dd = 0; dd < hd; ++dd) gqr[dd] += T(sc * accq[size_t(dd)]);
          }
          if (gk) {
            const T* qr = Q.row(i) + h * hd;
            for (int j = 0; j <= jmax; ++j) {
              if (padded(j)) continue;
              T* gkr = gk->row(j) + kvh * hd;
              for (int dd = 0; dd < hd; ++dd)
                gkr[dd] += T(sc * ds[size_t(j)] * double(qr[dd]));
            }
          }
        }
      }
      return;
    }
    case Op::Conv1d: {
      const Ten& X = val(n.in[0]);
      const Ten& W = val(n.in[1]);
      Ten* gx = grad_of(n.in[0]);
      Ten* gw = grad_of(n.in[1]);
      Ten* gb = grad_of(n.in[2]);
      int tin = X.rows(), cin = X.cols();
      int kk = W.dim(0), cout = W.dim(2);
      int stride = n.i0, pad = n.i1;
      int tout = g.rows();
      if (gb) {
        for (int tp = 0; tp < tout; ++tp) {
          const T* gr = g.row(tp);
          for (int co = 0; co < cout; ++co) gb->data[size_t(co)] += gr[co];
        }
      }
      for (int tp = 0; tp < tout; ++tp) {
        const T* gr = g.row(tp);
        for (int k = 0; k < kk; ++k) {
          int t = tp * stride + k - pad;
          if (t < 0 || t >= tin) continue;
          const T* x = X.row(t);
          T* gxr = gx ? gx->row(t) : nullptr;
          for (int ci = 0; ci < cin; ++ci) {
            const T* wr = W.data.data() + (size_t(k) * cin + ci) * cout;
            if (gw) {
              T* gwr = gw->data.data() + (size_t(k) * cin + ci) * cout;
              T a = x[ci];
              for (int co = 0; co < cout; ++co) gwr[co] += a * gr[co];
            }
            if (gxr) {
              double acc = 0.0;
              for (int co = 0; co < cout; ++co)
                acc += double(wr[co]) * double(gr[co]);
              gxr[ci] += T(acc);
            }
          }
        }
      }
      return;
    }
    case Op::Conv1dT: {
      const Ten& X = val(n.in[0]);
      const Ten& W = val(n.in[1]);
      Ten* gx = grad_of(n.in[0]);
      Ten* gw = grad_of(n.in[1]);
      Ten* gb = grad_of(n.in[2]);
      int tin = X.rows(), cin = X.cols();
      int kk = W.dim(0), cout = W.dim(2);
      int stride = n.i0, pad = n.i1;
      int tout = g.rows();
      if (gb) {
        for (int tp = 0; tp < tout; ++tp) {
          const T* gr = g.row(tp);
          for (int co = 0; co < cout; ++co) gb->data[size_t(co)] += gr[co];
        }
      }
      for (int t = 0; t < tin; ++t) {
        const T* x = X.row(t);
        T* gxr = gx ? gx->row(t) : nullptr;
        for (int k = 0; k < kk; ++k) {
          int tp = t * stride + k - pad;
          if (tp < 0 || tp >= tout) continue;
          const T* gr = g.row(tp);
          for (int ci = 0; ci < cin; ++ci) {
            const T* wr = W.data.data() + (size_t(k) * cin + ci) * cout;
            if (gw) {
              T* gwr = gw->data.data() + (size_t(k) * cin + ci) * cout;
              T a = x[ci];
              for (int co = 0; co < cout; ++co) gwr[co] += a * gr[co];
            }
            if (gxr) {
              double acc = 0.0;
              for (int co = 0; co < cout; ++co)
                acc += double(wr[co]) * double(gr[co]);
              gxr[ci] += T(acc);
            }
          }
        }
      }
      return;
    }
    case Op::CrossEntropy: {
      if (Ten* gl = grad_of(n.in[0])) {
        const Ten& L = val(n.in[0]);
        int rows = L.rows();
        int m = 0;
        for (int t = 0; t < rows; ++t)
          if (n.bvec[size_t(t)]) ++m;
        double go = double(g.data[0]) / m;
        for (int t = 0; t < rows; ++t) {
          if (!n.bvec[size_t(t)]) continue;
          const Range& blk = n.ranges[size_t(t)];
          const T* l = L.row(t);
          T* gr = gl->row(t);
          double lse = n.daux[size_t(t)];
          int tid = n.ivec[size_t(t)];
          for (int j = blk.lo; j < blk.hi; ++j) {
            double p = std::exp(double(l[j]) - lse);
            gr[j] += T((p - (j == tid ? 1.0 : 0.0)) * go);
          }
        }
      }
      return;
    }
    case Op::MeanAbs: {
      const Ten& A = val(n.in[0]);
      const Ten& B = val(n.in[1]);
      double go = double(g.data[0]) / double(A.numel());
      Ten* ga = grad_of(n.in[0]);
      Ten* gb = grad_of(n.in[1]);
      for (size_t i = 0; i < A.data.size(); ++i) {
        double d = double(A.data[i]) - double(B.data[i]);
        double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        if (ga) ga->data[i] += T(go * s);
        if (gb) gb->data[i] -= T(go * s);
      }
      return;
    }
    case Op::MeanSq: {
      const Ten& A = val(n.in[0]);
      const Ten& B = val(n.in[1]);
      double go = double(g.data[0]) / double(A.numel());
      Ten* ga = grad_of(n.in[0]);
      Ten* gb = grad_of(n.in[1]);
      for (size_t i = 0; i < A.data.size(); ++i) {
        double d = 2.0 * (double(A.data[i]) - double(B.data[i]));
        if (ga) ga->data[i] += T(go * d);
        if (gb) gb->data[i] -= T(go * d);
      }
      return;
    }
    case Op::StraightThrough: {
      if (Ten* gz = grad_of(n.in[0]))
        for (size_t i = 0; i < g.data.size(); ++i) gz->data[i] += g.data[i];
      return;
    }
    case Op::WeightedSum: {
      for (size_t i = 0; i < n.in.size(); ++i) {
        if (Ten* gi = grad_of(n.in[i]))
          gi->data[0] += T(n.dvec[i] * double(g.data[0]));
      }
      return;
    }
    case Op::Custom: {
      if (Ten* gi = grad_of(n.in[0]))
        n.custom->backward(val(n.in[0]), double(g.data[0]), *gi);
      return;
    }
  }
}

template <class T>
void Tape<T>::backward(NodeId loss) {
  Node& ln = at(loss);
  check(ln.value.numel() == 1, "backward: loss must be a scalar");
  check(ln.requires_grad, "backward: loss is detached from the gradient graph");
  Ten* gl = grad_of(loss);
  gl->data[0] += T(1);
  for (NodeId id = loss; id >= 0; --id) {
    Node& n = nodes_[size_t(id)];
    if (n.requires_grad) backprop(n);
  }
}

template <class T>
void Tape<T>::rerun() {
  for (Node& n : nodes_) {
    if (n.op == Op::Leaf || n.op == Op::Constant) continue;
    compute(n);
    check_finite(n);
  }
}

template <class T>
std::map<std::string, TensorT<T>> forward_graph(
    Tape<T>& tape, const std::map<std::string, TensorT<T>>& inputs) {
  for (const auto& [name, ten] : inputs) {
    NodeId id = tape.node_by_name(name);
    check(id >= 0, "forward_graph: no node named '" + name + "'");
    tape.set_value(id, ten);
  }
  tape.rerun();
  std::map<std::string, TensorT<T>> out;
  for (const std::string& name : tape.names_in_order())
    out[name] = tape.val(tape.node_by_name(name));
  return out;
}

template <class T>
std::map<std::string, TensorT<T>> grad_named(Tape<T>& tape, NodeId loss) {
  tape.backward(loss);
  std::map<std::string, TensorT<T>> out;
  for (const std::string& name : tape.names_in_order()) {
    NodeId id = tape.node_by_name(name);
    if (tape.requires_grad(id)) out[name] = tape.grad(id);
  }
  return out;
}

template class Tape<float>;
template class Tape<double>;
template std::map<std::string, TensorT<float>> forward_graph(
    Tape<float>&, const std::map<std::string, TensorT<float>>&);
template std::map<std::string, TensorT<double>> forward_graph(
    Tape<double>&, const std::map<std::string, TensorT<double>>&);
template std::map<std::string, TensorT<float>> grad_named(Tape<float>&, NodeId);
template std::map<std::string, TensorT<double>> grad_named(Tape<double>&, NodeId);

}  // namespace atck
