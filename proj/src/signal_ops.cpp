// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#include "wm4/signal_ops.hpp"

#include <cmath>

namespace wm4 {

std::vector<cdouble> Codebook::column(int i) const {
  if (i < 0 || i >= n_beams) throw ShapeError("Codebook::column: index out of range");
  std::vector<cdouble> c(static_cast<size_t>(n_antennas));
  for (int m = 0; m < n_antennas; ++m) c[size_t(m)] = at(m, i);
  return c;
}

SeConfig SeConfig::from_snr_db(double db) {
  SeConfig cfg;
  cfg.snr_db = db;
  cfg.noise_power = std::pow(10.0, -db / 10.0);
  return cfg;
}

void SeConfig::validate() const {
  if (!(noise_power > 0)) throw ConfigError("SeConfig: noise power must be positive");
}

cdouble ls_estimate(cdouble y_rx, cdouble x_pilot) {
  if (std::abs(x_pilot) <= 0) throw DomainError("ls_estimate: zero pilot");
  return y_rx / x_pilot;
}

std::vector<cdouble> ls_estimate(const std::vector<cdouble>& y_rx,
                                 const std::vector<cdouble>& x_pilot) {
  if (y_rx.size() != x_pilot.size()) throw ShapeError("ls_estimate: size mismatch");
  std::vector<cdouble> h(y_rx.size());
  for (size_t i = 0; i < y_rx.size(); ++i) h[i] = ls_estimate(y_rx[i], x_pilot[i]);
  return h;
}

std::vector<cdouble> matched_filter_precoder(const std::vector<cdouble>& h) {
  double n2 = 0;
  for (const auto& v : h) n2 += std::norm(v);
  if (n2 <= 0) throw DomainError("matched_filter_precoder: zero channel");
  const double inv = 1.0 / std::sqrt(n2);
  std::vector<cdouble> w(h.size());
  for (size_t i = 0; i < h.size(); ++i) w[i] = h[i] * inv;
  return w;
}

namespace {

double se_term(const cdouble* hk, const cdouble* wk, int nt, double sigma2) {
  cdouble acc{0, 0};
  // h_k^H w_k
  for (int m = 0; m < nt; ++m) acc += std::conj(hk[m]) * wk[m];
  return std::log2(1.0 + std::norm(acc) / sigma2);
}

} // namespace

double spectral_efficiency(const std::vector<cdouble>& h, int k, int nt,
                           const std::vector<cdouble>& w_shared, const SeConfig& cfg) {
  cfg.validate();
  if (int(h.size()) != k * nt) throw ShapeError("spectral_efficiency: H size mismatch");
  if (int(w_shared.size()) != nt) throw ShapeError("spectral_efficiency: beam size mismatch");
  double r = 0;
  for (int j = 0; j < k; ++j) r += se_term(&h[size_t(j) * nt], w_shared.data(), nt, cfg.noise_power);
  return r;
}

double spectral_efficiency_per_k(const std::vector<cdouble>& h, int k, int nt,
                                 const std::vector<cdouble>& w_per_k, const SeConfig& cfg) {
  cfg.validate();
  if (int(h.size()) != k * nt) throw ShapeError("spectral_efficiency_per_k: H size mismatch");
  if (w_per_k.size() != h.size()) throw ShapeError("spectral_efficiency_per_k: W size mismatch");
  double r = 0;
  for (int j = 0; j < k; ++j)
    r += se_term(&h[size_t(j) * nt], &w_per_k[size_t(j) * nt], nt, cfg.noise_power);
  return r;
}

Codebook dft_codebook(int n_antennas, int n_beams, double spacing_wl) {
  if (n_antennas < 1) throw ConfigError("dft_codebook: need at least one antenna");
  if (n_beams < n_antennas)
    throw ConfigError("dft_codebook: beam count below antenna count breaks super-resolution");
  Codebook cb;
  cb.n_antennas = n_antennas;
  cb.n_beams = n_beams;
  cb.w.resize(size_t(n_antennas) * n_beams);
  const double norm = 1.0 / std::sqrt(double(n_antennas));
  for (int i = 0; i < n_beams; ++i) {
    const double s = -1.0 + 2.0 * i / n_beams; // sin(theta_i)
    // same sign convention as steering_vector, so column i is the matched
    // beam for a path departing at sin(theta) = s
    const double step = kPi * s * 2.0 * spacing_wl;
    for (int m = 0; m < n_antennas; ++m)
      cb.at(m, i) = cdouble{std::cos(step * m), std::sin(step * m)} * norm;
  }
  return cb;
}

std::pair<int, double> best_beam(const std::vector<cdouble>& h_mm, int k, int nt,
                                 const Codebook& cb, const SeConfig& cfg) {
  if (cb.n_antennas != nt) throw ShapeError("best_beam: codebook antenna count mismatch");
  int best = 0;
  double best_se = -1;
  std::vector<cdouble> col(static_cast<size_t>(nt));
  for (int i = 0; i < cb.n_beams; ++i) {
    for (int m = 0; m < nt; ++m) col[size_t(m)] = cb.at(m, i);
    double se = spectral_efficiency(h_mm, k, nt, col, cfg);
    if (se > best_se) { // strict: ties keep the lowest index
      best_se = se;
      best = i;
    }
  }
  return {best, best_se};
}

int codebook_baseline_bf(const std::vector<cdouble>& h_sub6, int k, int nt,
                         const Codebook& cb_sub6, const Codebook& cb_mm, const SeConfig& cfg) {
  auto [idx, se] = best_beam(h_sub6, k, nt, cb_sub6, cfg);
  (void)se;
  if (cb_sub6.n_beams == cb_mm.n_beams) return idx;
  if (cb_sub6.n_beams < 2) return 0;
  double frac = double(idx) / double(cb_sub6.n_beams - 1);
  double mapped = frac * double(cb_mm.n_beams - 1);
  return int(std::lround(mapped));
}

} // namespace wm4
