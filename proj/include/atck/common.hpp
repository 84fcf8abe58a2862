// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace atck {

// All recoverable failures are thrown as atck::Error with a message that names
// the operation. Callers that need exit-code discipline (the cli) translate.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] void fail(const std::string& msg);

inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

struct Range {
  int lo = 0;
  int hi = 0;  // half open [lo, hi)
  int size() const { return hi - lo; }
  bool contains(int v) const { return v >= lo && v < hi; }
};

// Deterministic PRNG. std:: distributions are not bit-stable across library
// implementations, so all draws go through this engine (xoshiro256++ seeded
// via splitmix64). Same seed, same platform, same sequence.
struct Rng {
  uint64_t s[4];

  explicit Rng(uint64_t seed);
  uint64_t next_u64();
  double uniform();                 // [0, 1)
  int64_t uniform_int(int64_t n);   // [0, n), unbiased
  double normal();                  // standard normal, Box-Muller (no cache)
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Seed mixing for derived streams, e.g. per-item or per-step seeds.
  static uint64_t mix(uint64_t a, uint64_t b);
};

// Thread budget for coarse-grain parallelism (batch instances, prompts).
// ATCK_THREADS caps it; results are reduced in index order by callers so the
// outcome does not depend on the budget.
int thread_budget();

// Runs fn(i) for i in [0, n) using at most thread_budget() threads. fn must
// only write to slot i of caller-owned storage; the caller reduces in order.
void parallel_map(int n, const std::function<void(int)>& fn);

std::string lower(const std::string& s);

}  // namespace atck
