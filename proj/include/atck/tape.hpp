// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "atck/tensor.hpp"

namespace atck {

using NodeId = int32_t;

enum class MaskKind : uint8_t { Causal, Full };

// Attention mask: kind plus optional per-position pad flags. Pad positions
// neither attend nor are attended to; their output rows are zero.
struct AttentionMask {
  MaskKind kind = MaskKind::Causal;
  int length = 0;
  std::vector<uint8_t> pad;  // empty means no padding

  bool allowed(int i, int j) const {
    if (!pad.empty() && (pad[size_t(i)] || pad[size_t(j)])) return false;
    if (kind == MaskKind::Causal && j > i) return false;
    return true;
  }
};

AttentionMask build_mask(MaskKind kind, int length, std::vector<uint8_t> pad = {});

// Reverse-mode autodiff over a tape of dense tensor ops. Ops evaluate eagerly
// as they are recorded, so callers may branch on intermediate values (e.g.
// quantizer index selection) and keep recording on the same tape.
//
// Determinism: every reduction runs in a fixed sequential order per output
// element (ascending over the reduction axis). Reductions accumulate in
// double where noted in the kernels; storage is T. Recording the same ops on
// the same inputs yields bit-identical values and gradients, and rerun()
// re-evaluates the recorded graph bit-identically.
//
// Any non-finite value produced by an op raises an Error naming the op.
template <class T>
class Tape {
 public:
  using Ten = TensorT<T>;

  // Custom scalar-valued op with caller-supplied forward and backward.
  // backward must accumulate into the provided gradient tensor.
  struct CustomScalar {
    std::string name;
    std::function<double(const Ten&)> forward;
    std::function<void(const Ten&, double, Ten&)> backward;
  };

  // Leaves. leaf() participates in gradients, constant() does not.
  NodeId constant(Ten v, std::string name = {});
  NodeId leaf(Ten v, std::string name = {});

  // Rebinds a leaf or constant value (same shape) for rerun().
  void set_value(NodeId id, Ten v);

  NodeId matmul(NodeId a, NodeId b);
  // add: same shape, or b of rank 1 broadcast across rows of a.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId silu(NodeId a);
  NodeId softmax_rows(NodeId a);
  NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5);
  NodeId embedding(NodeId table, std::vector<int> ids);
  NodeId concat_rows(std::vector<NodeId> parts);
  // Rotary position map on packed heads [T, n_heads*head_dim]; pair (2i,2i+1)
  // of each head rotates by pos * base^(-2i/head_dim).
  NodeId rope(NodeId x, int n_heads, double base);
  // Grouped-query attention. q: [T, n_heads*hd], k/v: [T, n_kv_heads*hd].
  NodeId attention(NodeId q, NodeId k, NodeId v, int n_heads, int n_kv_heads,
                   const AttentionMask& mask);
  // 1D convolution, x: [T, Cin], w: [K, Cin, Cout], b: [Cout].
  // out length = (T + 2*pad - K)/stride + 1.
  NodeId conv1d(NodeId x, NodeId w, NodeId b, int stride, int pad);
  // Transposed variant, out length = (T-1)*stride + K - 2*pad.
  NodeId conv1d_transpose(NodeId x, NodeId w, NodeId b, int stride, int pad);
  // Mean cross entropy over masked-in rows; per-row vocab block restriction,
  // logits outside the block are excluded from the softmax entirely.
  NodeId cross_entropy(NodeId logits, std::vector<int> targets,
                       std::vector<uint8_t> loss_mask, std::vector<Range> blocks);
  NodeId mean_abs(NodeId a, NodeId b);
  NodeId mean_sq(NodeId a, NodeId b);
  // Forward value is `quantized`; gradient passes through to z unchanged.
  NodeId straight_through(NodeId z, Ten quantized);
  NodeId weighted_sum(std::vector<NodeId> xs, std::vector<double> ws);
  NodeId custom_scalar(NodeId x, CustomScalar op);

  // Backprop from a scalar loss node. Gradients accumulate; call zero_grad()
  // between passes if reusing the tape.
  void backward(NodeId loss);
  // Re-evaluates every recorded op in recording order.
  void rerun();
  void zero_grad();

  const Ten& val(NodeId id) const;
  const Ten& grad(NodeId id) const;  // error if the node is detached
  bool requires_grad(NodeId id) const;

  void name_node(NodeId id, const std::string& name);
  NodeId node_by_name(const std::string& name) const;  // -1 if absent
  const std::vector<std::string>& names_in_order() const { return named_order_; }
  int size() const { return int(nodes_.size()); }

 private:
  enum class Op : uint8_t {
    Leaf, Constant, Matmul, Add, Sub, Mul, Scale, Silu, Softmax, LayerNorm,
    Embedding, ConcatRows, Rope, Attention, Conv1d, Conv1dT, CrossEntropy,
    MeanAbs, MeanSq, StraightThrough, WeightedSum, Custom,
  };
  static const char* op_name(Op op);

  struct Node {
    Op op;
    std::vector<NodeId> in;
    Ten value;
    Ten grad;
    bool requires_grad = false;
    std::string name;
    int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
    double f0 = 0.0;
    std::vector<int> ivec;
    std::vector<uint8_t> bvec;
    std::vector<Range> ranges;
    std::vector<double> dvec;
    Ten aux;
    std::vector<double> daux;
    std::shared_ptr<CustomScalar> custom;
  };

  NodeId push(Node n);
  Node& at(NodeId id);
  const Node& at(NodeId id) const;
  void compute(Node& n);
  void backprop(Node& n);
  void check_finite(const Node& n) const;
  Ten* grad_of(NodeId id);  // nullptr if detached

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> names_;
  std::vector<std::string> named_order_;
};

extern template class Tape<float>;
extern template class Tape<double>;

// Rebinds named leaves from `inputs`, re-evaluates, and returns the values of
// all named nodes.
template <class T>
std::map<std::string, TensorT<T>> forward_graph(
    Tape<T>& tape, const std::map<std::string, TensorT<T>>& inputs);

// Runs backward from `loss` and returns gradients of all named grad-tracked
// leaves.
template <class T>
std::map<std::string, TensorT<T>> grad_named(Tape<T>& tape, NodeId loss);

}  // namespace atck
