// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "wm4/common.hpp"
#include "wm4/rng.hpp"

namespace wm4 {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

// Dense row-major double tensor. All model math is stored in double; the GEMM
// layer below can optionally run its inner product in float for speed.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), v_(check_size(shape_), 0.0) {}
  Tensor(Shape shape, double fill) : shape_(std::move(shape)), v_(check_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), v_(std::move(data)) {
    if (int64_t(v_.size()) != shape_numel(shape_)) throw ShapeError("Tensor: data size mismatch");
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor randn(Shape s, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(s));
    for (auto& x : t.v_) x = stddev * rng.normal();
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return int64_t(v_.size()); }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double& operator[](int64_t i) { return v_[size_t(i)]; }
  double operator[](int64_t i) const { return v_[size_t(i)]; }

  std::vector<double>& vec() { return v_; }
  const std::vector<double>& vec() const { return v_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel()) throw ShapeError("Tensor::reshaped: element count mismatch");
    Tensor t;
    t.shape_ = std::move(s);
    t.v_ = v_;
    return t;
  }

  void fill(double x) { std::fill(v_.begin(), v_.end(), x); }

  uint64_t content_hash() const {
    uint64_t h = fnv1a64(shape_.data(), shape_.size() * sizeof(int64_t));
    return fnv1a64(v_.data(), v_.size() * sizeof(double), h);
  }

 private:
  static size_t check_size(const Shape& s) {
    for (int64_t d : s)
      if (d < 0) throw ShapeError("Tensor: negative dimension");
    return size_t(shape_numel(s));
  }

  Shape shape_;
  std::vector<double> v_;
};

// ---------------------------------------------------------------------------
// GEMM layer. C = alpha * op(A) * op(B) + beta * C, row-major, contiguous.
// Precision::F32 converts operands to float, multiplies, converts back; about
// twice the throughput of the double path on one core and plenty for training.
// Gradient checking and the numeric oracles run with Precision::F64.

enum class Precision { F64, F32 };

Precision gemm_precision();
void set_gemm_precision(Precision p);

/// RAII scope guard: force a precision inside a block (used by tests/oracles).
class GemmPrecisionGuard {
 public:
  explicit GemmPrecisionGuard(Precision p) : prev_(gemm_precision()) { set_gemm_precision(p); }
  ~GemmPrecisionGuard() { set_gemm_precision(prev_); }

 private:
  Precision prev_;
};

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, const double* b, double beta, double* c);

} // namespace wm4
