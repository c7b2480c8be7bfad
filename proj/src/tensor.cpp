// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#include "wm4/tensor.hpp"

#include <Eigen/Dense>

namespace wm4 {

namespace {

Precision g_precision = Precision::F64; // single-threaded process, plain global

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
void gemm_typed(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha, const S* a,
                const S* b, double beta, double* c) {
  using Map = Eigen::Map<const RowMat<S>>;
  Map A(a, ta ? k : m, ta ? m : k);
  Map B(b, tb ? n : k, tb ? k : n);
  RowMat<S> prod(m, n);
  if (!ta && !tb)
    prod.noalias() = A * B;
  else if (ta && !tb)
    prod.noalias() = A.transpose() * B;
  else if (!ta && tb)
    prod.noalias() = A * B.transpose();
  else
    prod.noalias() = A.transpose() * B.transpose();

  Eigen::Map<RowMat<double>> C(c, m, n);
  if (beta == 0.0)
    C = (alpha * prod.template cast<double>());
  else
    C = beta * C + alpha * prod.template cast<double>();
}

} // namespace

Precision gemm_precision() { return g_precision; }
void set_gemm_precision(Precision p) { g_precision = p; }

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, const double* b, double beta, double* c) {
  if (m <= 0 || n <= 0) return;
  if (k <= 0) {
    Eigen::Map<RowMat<double>> C(c, m, n);
    if (beta == 0.0)
      C.setZero();
    else
      C *= beta;
    return;
  }
  if (g_precision == Precision::F64) {
    gemm_typed<double>(trans_a, trans_b, m, n, k, alpha, a, b, beta, c);
    return;
  }
  const int64_t an = trans_a ? k * m : m * k;
  const int64_t bn = trans_b ? n * k : k * n;
  static thread_local std::vector<float> fa, fb;
  fa.resize(size_t(an));
  fb.resize(size_t(bn));
  for (int64_t i = 0; i < an; ++i) fa[size_t(i)] = float(a[i]);
  for (int64_t i = 0; i < bn; ++i) fb[size_t(i)] = float(b[i]);
  gemm_typed<float>(trans_a, trans_b, m, n, k, alpha, fa.data(), fb.data(), beta, c);
}

} // namespace wm4
