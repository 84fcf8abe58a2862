// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "atck/optim.hpp"
#include "atck/tape.hpp"

using namespace atck;

namespace {

// Central finite differences against tape gradients. The builder gets leaf
// ids created from `inputs` in order and returns the scalar loss node.
template <class T>
double fd_max_rel_err(
    const std::function<NodeId(Tape<T>&, const std::vector<NodeId>&)>& build,
    std::vector<TensorT<T>> inputs, double h, uint64_t seed,
    int max_coords_per_input = 24) {
  auto run = [&](const std::vector<TensorT<T>>& vals) {
    Tape<T> tape;
    std::vector<NodeId> ids;
    for (const auto& v : vals) ids.push_back(tape.leaf(v));
    NodeId loss = build(tape, ids);
    return std::make_pair(double(tape.val(loss).data[0]), std::move(tape));
  };

  Tape<T> tape;
  std::vector<NodeId> ids;
  for (const auto& v : inputs) ids.push_back(tape.leaf(v));
  NodeId loss = build(tape, ids);
  tape.backward(loss);

  Rng rng(seed);
  double worst = 0.0;
  for (size_t which = 0; which < inputs.size(); ++which) {
    int64_t n = inputs[which].numel();
    std::vector<int64_t> coords;
    if (n <= max_coords_per_input) {
      for (int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < max_coords_per_input; ++i)
        coords.push_back(rng.uniform_int(n));
    }
    for (int64_t c : coords) {
      std::vector<TensorT<T>> vals = inputs;
      T keep = vals[which].data[size_t(c)];
      vals[which].data[size_t(c)] = T(double(keep) + h);
      double fp = run(vals).first;
      vals[which].data[size_t(c)] = T(double(keep) - h);
      double fm = run(vals).first;
      double fd = (fp - fm) / (2.0 * h);
      double ad = double(tape.grad(ids[which]).data[size_t(c)]);
      double err = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

template <class T>
TensorT<T> randn(std::vector<int> dims, Rng& rng, double stddev = 1.0) {
  TensorT<T> t = TensorT<T>::zeros(std::move(dims));
  fill_normal(t, rng, 0.0, stddev);
  return t;
}

}  // namespace

TEST_CASE("rng: deterministic streams, uniform_int bounds, normal moments") {
  Rng a(42), b(42), c(43);
  bool same = true, diff = false;
  for (int i = 0; i < 100; ++i) {
    uint64_t va = a.next_u64();
    same = same && va == b.next_u64();
    diff = diff || va != c.next_u64();
  }
  CHECK(same);
  CHECK(diff);

  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    int64_t v = r.uniform_int(13);
    CHECK(v >= 0);
    CHECK(v < 13);
  }
  double mean = 0.0, sq = 0.0;
  int n = 20000;
  for (int i = 0; i < n; ++i) {
    double z = r.normal();
    mean += z;
    sq += z * z;
  }
  mean /= n;
  double stddev = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) < 0.05);
  CHECK(stddev > 0.95);
  CHECK(stddev < 1.05);
}

TEST_CASE("fd: elementwise ops (add, sub, mul, scale, silu)") {
  Rng rng(1);
  auto a = randn<float>({3, 4}, rng);
  auto b = randn<float>({3, 4}, rng);
  auto bias = randn<float>({4}, rng);
  auto target = randn<float>({3, 4}, rng);
  auto build = [&](Tape<float>& t, const std::vector<NodeId>& in) {
    NodeId tgt = t.constant(target);
    NodeId x = t.add(in[0], in[1]);
    x = t.add(x, in[2]);  // row broadcast
    x = t.mul(x, in[0]);
    x = t.sub(x, in[1]);
    x = t.scale(x, 0.7);
    x = t.silu(x);
    return t.mean_sq(x, tgt);
  };
  CHECK(fd_max_rel_err<float>(build, {a, b, bias}, 1e-3, 11) < 1e-3);
}

TEST_CASE("fd: matmul") {
  Rng rng(2);
  auto a = randn<float>({3, 4}, rng);
  auto b = randn<float>({4, 5}, rng);
  auto target = randn<float>({3, 5}, rng);
  auto build = [&](Tape<float>& t, const std::vector<NodeId>& in) {
    return t.mean_sq(t.matmul(in[0], in[1]), t.constant(target));
  };
  CHECK(fd_max_rel_err<float>(build, {a, b}, 1e-3, 12) < 1e-3);
}

TEST_CASE("fd: softmax and layer_norm") {
  Rng rng(3);
  auto x = randn<float>({4, 6}, rng);
  auto gamma = randn<float>({6}, rng, 0.5);
  for (auto& v : gamma.data) v += 1.0f;
  auto beta = randn<float>({6}, rng, 0.2);
  auto target = randn<float>({4, 6}, rng);
  auto build = [&](Tape<float>& t, const std::vector<NodeId>& in) {
    NodeId y = t.layer_norm(in[0], in[1], in[2]);
    y = t.softmax_rows(y);
    return t.mean_sq(y, t.constant(target));
  };
  CHECK(fd_max_rel_err<float>(build, {x, gamma, beta}, 1e-3, 13) < 1e-3);

  Tape<float> t;
  NodeId sm = t.softmax_rows(t.leaf(randn<float>({5, 7}, rng)));
  for (int r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 7; ++c) sum += double(t.val(sm).row(r)[c]);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("fd: embedding with repeated ids") {
  Rng rng(4);
  auto table = randn<float>({6, 3}, rng);
  auto target = randn<float>({5, 3}, rng);
  auto build = [&](Tape<float>& t, const std::vector<NodeId>& in) {
    NodeId e = t.embedding(in[0], {0, 2, 2, 5, 1});
    return t.mean_sq(e, t.constant(target));
  };
  CHECK(fd_max_rel_err<float>(build, {table}, 1e-3, 14) < 1e-3);
}

TEST_CASE("fd: concat_rows and rope") {
  Rng rng(5);
  auto a = randn<float>({3, 8}, rng);
  auto b = randn<float>({2, 8}, rng);
  auto target = randn<float>({5, 8}, rng);
  auto build = [&](Tape<float>& t, const std::vector<NodeId>& in) {
    NodeId x = t.concat_rows({in[0], in[1]});
    x = t.rope(x, 2, 10000.0);
    return t.mean_sq(x, t.constant(target));
  };
  CHECK(fd_max_rel_err<float>(build, {a, b}, 1e-3, 15) < 1e-3);
}

TEST_CASE("rope: norm preserving and position dependent") {
  Rng rng(6);
  auto x = randn<float>({4, 8}, rng);
  Tape<float> t;
  NodeId in = t.leaf(x);
  NodeId y = t.rope(in, 2, 10000.0);
  for (int r = 0; r < 4; ++r) {
    double n0 = 0.0, n1 = 0.0;
    for (int c = 0; c < 8; ++c) {
      n0 += double(x.row(r)[c]) * double(x.row(r)[c]);
      n1 += double(t.val(y).row(r)[c]) * double(t.val(y).row(r)[c]);
    }
    CHECK(n1 == doctest::Approx(n0).epsilon(1e-4));
  }
  // row 0 is unrotated, later rows are not (for generic input)
  for (int c = 0; c < 8; ++c)
    CHECK(t.val(y).row(0)[c] == doctest::Approx(double(x.row(0)[c])).epsilon(1e-6));
}

TEST_CASE("fd: attention (gqa, causal, full, pads)") {
  Rng rng(7);
  int T = 5, H = 2, KVH = 1, hd = 4;
  auto q = randn<float>({T, H * hd}, rng, 0.7);
  auto k = randn<float>({T, KVH * hd}, rng, 0.7);
  auto v = randn<float>({T, KVH * hd}, rng, 0.7);
  auto target = randn<float>({T, H * hd}, rng);

  for (MaskKind kind : {MaskKind::Causal, MaskKind::Full}) {
    auto build = [&](Tape<float>& t, const std::vector<NodeId>& in) {
      AttentionMask m = build_mask(kind, T);
      NodeId y = t.attention(in[0], in[1], in[2], H, KVH, m);
      return t.mean_sq(y, t.constant(target));
    };
    CHECK(fd_max_rel_err<float>(build, {q, k, v}, 1e-3, 16) < 1e-3);
  }

  auto build_pad = [&](Tape<float>& t, const std::vector<NodeId>& in) {
    AttentionMask m = build_mask(MaskKind::Full, T, {0, 0, 1, 0, 0});
    NodeId y = t.attention(in[0], in[1], in[2], H, KVH, m);
    return t.mean_sq(y, t.constant(target));
  };
  CHECK(fd_max_rel_err<float>(build_pad, {q, k, v}, 1e-3, 17) < 1e-3);
}

TEST_CASE("fd: conv1d and conv1d_transpose") {
  Rng rng(8);
  auto x = randn<float>({12, 3}, rng);
  auto w = randn<float>({4, 3, 5}, rng, 0.5);
  auto b = randn<float>({5}, rng, 0.1);
  auto build = [&](Tape<float>& t, const std::vector<NodeId>& in) {
    NodeId y = t.conv1d(in[0], in[1], in[2], 2, 1);
    Rng r2(99);
    auto target = randn<float>(t.val(y).dims, r2);
    return t.mean_sq(y, t.constant(target));
  };
  CHECK(fd_max_rel_err<float>(build, {x, w, b}, 1e-3, 18) < 1e-3);

  auto wt = randn<float>({4, 3, 5}, rng, 0.5);
  auto build_t = [&](Tape<float>& t, const std::vector<NodeId>& in) {
    NodeId y = t.conv1d_transpose(in[0], in[1], in[2], 2, 1);
    Rng r2(98);
    auto target = randn<float>(t.val(y).dims, r2);
    return t.mean_sq(y, t.constant(target));
  };
  CHECK(fd_max_rel_err<float>(build_t, {x, wt, b}, 1e-3, 19) < 1e-3);
}

TEST_CASE("conv1d shapes: stride/pad arithmetic") {
  Rng rng(9);
  Tape<float> t;
  // kernel 2s, pad s/2 maps T -> T/s and back
  int s = 4;
  NodeId x = t.leaf(randn<float>({16, 2}, rng));
  NodeId w = t.constant(randn<float>({2 * s, 2, 3}, rng, 0.3));
  NodeId b = t.constant(Tensor::zeros({3}));
  NodeId y = t.conv1d(x, w, b, s, s / 2);
  CHECK(t.val(y).rows() == 4);
  NodeId wt = t.constant(randn<float>({2 * s, 3, 2}, rng, 0.3));
  NodeId b2 = t.constant(Tensor::zeros({2}));
  NodeId z = t.conv1d_transpose(y, wt, b2, s, s / 2);
  CHECK(t.val(z).rows() == 16);
}

TEST_CASE("cross_entropy: uniform logits in block of 4 gives ln 4") {
  Tape<float> t;
  Tensor logits = Tensor::full({1, 10}, 0.0f);
  NodeId l = t.leaf(logits);
  NodeId loss = t.cross_entropy(l, {5}, {1}, {{4, 8}});
  CHECK(double(t.val(loss).data[0]) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("cross_entropy: logits outside the block do not matter") {
  Rng rng(10);
  auto logits = randn<float>({3, 12}, rng);
  auto run = [&](const Tensor& lg) {
    Tape<float> t;
    NodeId l = t.leaf(lg);
    NodeId loss = t.cross_entropy(l, {4, 5, 6}, {1, 1, 1},
                                  {{4, 8}, {4, 8}, {4, 8}});
    return t.val(loss).data[0];
  };
  float base = run(logits);
  Tensor bumped = logits;
  bumped.row(1)[0] += 100.0f;   // outside [4, 8)
  bumped.row(2)[10] -= 50.0f;
  CHECK(run(bumped) == base);   // bitwise: excluded before the softmax
}

TEST_CASE("cross_entropy: backward is softmax minus one-hot") {
  Rng rng(11);
  auto logits = randn<float>({1, 6}, rng);
  Tape<float> t;
  NodeId l = t.leaf(logits);
  NodeId loss = t.cross_entropy(l, {2}, {1}, {{0, 6}});
  t.backward(loss);
  double denom = 0.0, maxv = -1e300;
  for (int j = 0; j < 6; ++j) maxv = std::max(maxv, double(logits.row(0)[j]));
  for (int j = 0; j < 6; ++j) denom += std::exp(double(logits.row(0)[j]) - maxv);
  for (int j = 0; j < 6; ++j) {
    double p = std::exp(double(logits.row(0)[j]) - maxv) / denom;
    double expect = p - (j == 2 ? 1.0 : 0.0);
    CHECK(double(t.grad(l).row(0)[j]) == doctest::Approx(expect).epsilon(1e-4));
  }
}

TEST_CASE("fd: cross_entropy blocked, with masked-out rows") {
  Rng rng(12);
  auto logits = randn<float>({4, 10}, rng);
  auto build = [&](Tape<float>& t, const std::vector<NodeId>& in) {
    return t.cross_entropy(in[0], {1, 6, 0, 9}, {1, 1, 0, 1},
                           {{0, 4}, {4, 8}, {0, 1}, {8, 10}});
  };
  CHECK(fd_max_rel_err<float>(build, {logits}, 1e-3, 20) < 1e-3);
}

TEST_CASE("fd: mean_abs away from ties, mean_sq, weighted_sum") {
  Rng rng(13);
  auto a = randn<float>({3, 4}, rng);
  auto b = randn<float>({3, 4}, rng);
  for (size_t i = 0; i < b.data.size(); ++i) b.data[i] += 2.0f;  // no sign flips
  auto build = [&](Tape<float>& t, const std::vector<NodeId>& in) {
    NodeId l1 = t.mean_abs(in[0], in[1]);
    NodeId l2 = t.mean_sq(in[0], in[1]);
    return t.weighted_sum({l1, l2}, {0.3, 1.7});
  };
  CHECK(fd_max_rel_err<float>(build, {a, b}, 1e-3, 21) < 1e-3);
}

TEST_CASE("straight_through: value is the quantized input, grad passes to z") {
  Rng rng(14);
  auto z = randn<float>({2, 3}, rng);
  auto q = randn<float>({2, 3}, rng);
  Tape<float> t;
  NodeId zn = t.leaf(z);
  NodeId st = t.straight_through(zn, q);
  for (size_t i = 0; i < q.data.size(); ++i)
    CHECK(t.val(st).data[i] == q.data[i]);
  NodeId loss = t.mean_sq(st, t.constant(Tensor::zeros({2, 3})));
  t.backward(loss);
  for (size_t i = 0; i < q.data.size(); ++i) {
    double expect = 2.0 * double(q.data[i]) / 6.0;  // d loss/d st, unchanged
    CHECK(double(t.grad(zn).data[i]) == doctest::Approx(expect).epsilon(1e-5));
  }
}

TEST_CASE("custom_scalar: forward value and backward hook") {
  auto a = Tensor::from({3}, {1.0f, 2.0f, 3.0f});
  Tape<float> t;
  NodeId x = t.leaf(a);
  Tape<float>::CustomScalar op;
  op.name = "sum_sq_half";
  op.forward = [](const Tensor& v) {
    double s = 0.0;
    for (float f : v.data) s += 0.5 * double(f) * double(f);
    return s;
  };
  op.backward = [](const Tensor& v, double g, Tensor& gx) {
    for (size_t i = 0; i < v.data.size(); ++i)
      gx.data[i] += float(g * double(v.data[i]));
  };
  NodeId loss = t.custom_scalar(x, op);
  CHECK(double(t.val(loss).data[0]) == doctest::Approx(7.0));
  t.backward(loss);
  CHECK(t.grad(x).data[0] == doctest::Approx(1.0f));
  CHECK(t.grad(x).data[2] == doctest::Approx(3.0f));
}

TEST_CASE("adamw: first step with unit-scale gradient moves by about lr") {
  ParamStore store;
  store.add("w", Tensor::from({1}, {1.0f}));
  store.at("w").grad.data[0] = 0.5f;
  AdamW opt;
  opt.cfg.lr = 0.1;
  opt.cfg.warmup = 0;
  opt.step(store);
  CHECK(double(store.at("w").value.data[0]) ==
        doctest::Approx(0.9000).epsilon(1e-6));
}

TEST_CASE("adamw: decoupled decay applies with zero gradient") {
  ParamStore store;
  store.add("w", Tensor::from({1}, {1.0f}));
  AdamW opt;
  opt.cfg.lr = 0.1;
  opt.cfg.weight_decay = 0.1;
  opt.cfg.warmup = 0;
  opt.step(store);
  CHECK(double(store.at("w").value.data[0]) ==
        doctest::Approx(0.99).epsilon(1e-7));
}

TEST_CASE("adamw: linear warmup then constant") {
  AdamW opt;
  opt.cfg.lr = 1e-3;
  opt.cfg.warmup = 100;
  CHECK(opt.lr_at(1) == doctest::Approx(1e-5));
  CHECK(opt.lr_at(50) == doctest::Approx(5e-4));
  CHECK(opt.lr_at(100) == doctest::Approx(1e-3));
  CHECK(opt.lr_at(1000) == doctest::Approx(1e-3));
}

namespace {
template <class T>
std::pair<std::vector<T>, std::vector<T>> run_small_graph(uint64_t seed) {
  Rng rng(seed);
  auto x = randn<T>({4, 6}, rng);
  auto w1 = randn<T>({6, 8}, rng, 0.3);
  auto w2 = randn<T>({8, 5}, rng, 0.3);
  Tape<T> t;
  NodeId xn = t.leaf(x, "x");
  NodeId w1n = t.leaf(w1, "w1");
  NodeId w2n = t.leaf(w2, "w2");
  NodeId h = t.silu(t.matmul(xn, w1n));
  NodeId logits = t.matmul(h, w2n);
  NodeId loss = t.cross_entropy(logits, {0, 1, 2, 3}, {1, 1, 1, 1},
                                {{0, 5}, {0, 5}, {0, 5}, {0, 5}});
  t.backward(loss);
  std::vector<T> vals = t.val(loss).data;
  std::vector<T> grads = t.grad(w1n).data;
  auto g2 = t.grad(xn).data;
  grads.insert(grads.end(), g2.begin(), g2.end());
  return {vals, grads};
}
}  // namespace

TEST_CASE("determinism: identical graphs produce bit-identical values and grads") {
  auto [v1, g1] = run_small_graph<float>(77);
  auto [v2, g2] = run_small_graph<float>(77);
  CHECK(std::memcmp(v1.data(), v2.data(), v1.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(float)) == 0);
}

TEST_CASE("determinism: rerun reproduces every value bit for bit") {
  Rng rng(21);
  Tape<float> t;
  NodeId x = t.leaf(randn<float>({5, 6}, rng), "x");
  NodeId w = t.leaf(randn<float>({6, 6}, rng, 0.4), "w");
  NodeId y = t.silu(t.matmul(x, w));
  NodeId g = t.constant(Tensor::full({6}, 1.0f));
  NodeId b = t.constant(Tensor::zeros({6}));
  NodeId z = t.layer_norm(y, g, b);
  Tensor before = t.val(z);
  t.rerun();
  CHECK(std::memcmp(before.data.data(), t.val(z).data.data(),
                    before.data.size() * sizeof(float)) == 0);
}

TEST_CASE("forward_graph and grad_named work through node names") {
  Tape<float> t;
  NodeId x = t.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}), "x");
  NodeId w = t.leaf(Tensor::from({2, 2}, {1, 0, 0, 1}), "w");
  NodeId y = t.matmul(x, w);
  t.name_node(y, "y");
  NodeId loss = t.mean_sq(y, t.constant(Tensor::zeros({2, 2})));
  t.name_node(loss, "loss");

  auto out = forward_graph(t, {{"x", Tensor::from({2, 2}, {2, 2, 2, 2})}});
  CHECK(out.at("y").data[0] == doctest::Approx(2.0f));
  auto grads = grad_named(t, loss);
  CHECK(grads.count("x") == 1);
  CHECK(grads.count("w") == 1);
  // named intermediates are reported too
  CHECK(grads.count("y") == 1);
  CHECK(grads.at("y").same_shape(out.at("y")));
}

TEST_CASE("errors: shape mismatch, non-finite, non-scalar backward, detached") {
  Tape<float> t;
  NodeId a = t.leaf(Tensor::zeros({2, 3}));
  NodeId b = t.leaf(Tensor::zeros({4, 5}));
  CHECK_THROWS_AS(t.matmul(a, b), Error);
  CHECK_THROWS_AS(t.add(a, b), Error);

  NodeId big = t.leaf(Tensor::full({2, 2}, 3e38f));
  CHECK_THROWS_WITH_AS(t.scale(big, 1e10), doctest::Contains("scale"), Error);

  CHECK_THROWS_AS(t.backward(a), Error);  // not a scalar

  NodeId c = t.constant(Tensor::zeros({2, 2}));
  CHECK_THROWS_AS((void)t.grad(c), Error);

  NodeId table = t.leaf(Tensor::zeros({4, 2}));
  CHECK_THROWS_WITH_AS(t.embedding(table, {4}),
                       doctest::Contains("unknown token id"), Error);

  NodeId l = t.leaf(Tensor::zeros({2, 6}));
  CHECK_THROWS_WITH_AS(t.cross_entropy(l, {0, 5}, {1, 1}, {{0, 4}, {0, 4}}),
                       doctest::Contains("outside block"), Error);
  CHECK_THROWS_WITH_AS(t.cross_entropy(l, {0, 1}, {0, 0}, {{0, 4}, {0, 4}}),
                       doctest::Contains("empty loss mask"), Error);
}

TEST_CASE("64-bit check mode: two-layer mlp with cross entropy, h=1e-3") {
  Rng rng(30);
  auto x = randn<double>({4, 6}, rng);
  auto w1 = randn<double>({6, 8}, rng, 0.4);
  auto w2 = randn<double>({8, 5}, rng, 0.4);
  auto build = [&](Tape<double>& t, const std::vector<NodeId>& in) {
    NodeId h = t.silu(t.matmul(in[0], in[1]));
    NodeId logits = t.matmul(h, in[2]);
    return t.cross_entropy(logits, {0, 1, 2, 3}, {1, 1, 1, 1},
                           {{0, 5}, {0, 5}, {0, 5}, {0, 5}});
  };
  CHECK(fd_max_rel_err<double>(build, {x, w1, w2}, 1e-3, 31, 40) < 1e-3);
  // tighter tolerance with a smaller step, still double
  CHECK(fd_max_rel_err<double>(build, {x, w1, w2}, 1e-5, 32, 40) < 1e-6);
}

TEST_CASE("mask laws: causal allows j<=i, pads block row and column") {
  AttentionMask causal = build_mask(MaskKind::Causal, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(causal.allowed(i, j) == (j <= i));
  AttentionMask full = build_mask(MaskKind::Full, 3, {0, 1, 0});
  CHECK(full.allowed(0, 2));
  CHECK(full.allowed(2, 0));
  CHECK(!full.allowed(1, 0));
  CHECK(!full.allowed(0, 1));
}
