// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#pragma once

#include <utility>
#include <vector>

#include "wm4/common.hpp"

namespace wm4 {

// Beam dictionary over a uniform sin(theta) grid. Columns are unit-norm;
// n_beams >= n_antennas gives the super-resolution regime.
struct Codebook {
  std::vector<cdouble> w; // [n_antennas, n_beams] row-major
  int n_antennas = 0;
  int n_beams = 0;

  cdouble& at(int m, int i) { return w[size_t(m) * n_beams + i]; }
  const cdouble& at(int m, int i) const { return w[size_t(m) * n_beams + i]; }
  std::vector<cdouble> column(int i) const;
};

struct SeConfig {
  double noise_power = 0.1; // sigma^2, linear
  double snr_db = 10.0;

  static SeConfig from_snr_db(double db);
  void validate() const; // sigma^2 > 0
};

/// Least-squares estimate: y/x per element. Zero pilot throws DomainError.
cdouble ls_estimate(cdouble y_rx, cdouble x_pilot);
std::vector<cdouble> ls_estimate(const std::vector<cdouble>& y_rx,
                                 const std::vector<cdouble>& x_pilot);

/// w = h / ||h||. Zero vector throws DomainError.
std::vector<cdouble> matched_filter_precoder(const std::vector<cdouble>& h);

/// R = sum_k log2(1 + |h_k^H w_k|^2 / sigma^2) with one shared beam, or with
/// per-subcarrier beams (w laid out [K, Nt]). H is a [K, Nt] slice.
double spectral_efficiency(const std::vector<cdouble>& h, int k, int nt,
                           const std::vector<cdouble>& w_shared, const SeConfig& cfg);
double spectral_efficiency_per_k(const std::vector<cdouble>& h, int k, int nt,
                                 const std::vector<cdouble>& w_per_k, const SeConfig& cfg);

/// DFT codebook: column i has entries exp(j*pi*m*sin(theta_i)*2*d_v)/sqrt(Nv)
/// on the grid sin(theta_i) = -1 + 2i/n_beams, matching the steering_vector
/// phase convention. Requires n_beams >= n_antennas.
Codebook dft_codebook(int n_antennas, int n_beams, double spacing_wl = 0.5);

/// Exhaustive search over all codewords; ties go to the lowest index.
std::pair<int, double> best_beam(const std::vector<cdouble>& h_mm, int k, int nt,
                                 const Codebook& cb, const SeConfig& cfg);

/// Non-learned beam baseline: best sub-6 GHz beam, mapped to the mmWave grid
/// by fractional position (denominators n_beams - 1).
int codebook_baseline_bf(const std::vector<cdouble>& h_sub6, int k, int nt,
                         const Codebook& cb_sub6, const Codebook& cb_mm, const SeConfig& cfg);

} // namespace wm4
