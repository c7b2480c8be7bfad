// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>

#include "wm4/common.hpp"

namespace wm4 {

// Deterministic random source. std::mt19937_64 drives everything, but the
// distribution transforms are implemented here because the std::*_distribution
// classes are implementation-defined and would break cross-toolchain
// reproducibility of generated datasets.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  // Independent child stream for (seed, index) pairs, e.g. one per dataset
  // sample. Mixing through splitmix64 keeps nearby indices decorrelated.
  static Rng child(uint64_t seed, uint64_t stream) {
    uint64_t x = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    return Rng(splitmix64(x));
  }

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller. One value per call, no caching, so the
  /// draw count is a pure function of the call count.
  double normal() {
    double u1 = 1.0 - uniform(); // (0, 1], keeps the log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  double exponential(double mean) {
    double u = 1.0 - uniform();
    return -mean * std::log(u);
  }

  /// Circularly symmetric complex normal with unit variance (0.5 per part).
  cdouble cnormal() {
    double re = normal() * 0.7071067811865475244;
    double im = normal() * 0.7071067811865475244;
    return {re, im};
  }

  /// Uniform integer in [0, n).
  uint64_t integer(uint64_t n) {
    // Rejection-free modulo is biased for huge n; n here is always small
    // (shuffles, expert counts), so the bias is irrelevant, but use the
    // multiply-shift trick anyway since it is unbiased enough and cheap.
    if (n == 0) throw DomainError("Rng::integer: n must be positive");
    uint64_t x = gen_();
    // 128-bit multiply-high
    unsigned __int128 m = (unsigned __int128)x * (unsigned __int128)n;
    return uint64_t(m >> 64);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(integer(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 gen_;
};

} // namespace wm4
