// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#include "wm4/channel.hpp"

#include <algorithm>
#include <cmath>

namespace wm4 {

void ScenarioConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("ScenarioConfig: " + m); };
  if (sub6_carrier_hz <= 0 || mm_carrier_hz <= 0) fail("carrier frequencies must be positive");
  if (sub6_bandwidth_hz <= 0 || mm_bandwidth_hz <= 0) fail("bandwidths must be positive");
  if (sub6_bandwidth_hz >= 2 * sub6_carrier_hz || mm_bandwidth_hz >= 2 * mm_carrier_hz)
    fail("bandwidth exceeds carrier range");
  if (sub6_antennas < 1 || mm_antennas < 1) fail("antenna counts must be at least 1");
  if (subcarriers < 2) fail("need at least 2 subcarriers");
  if (antenna_spacing_wl <= 0) fail("antenna spacing must be positive");
  if (clusters < 1 || paths_per_cluster < 1) fail("cluster geometry must be non-empty");
  if (ue_speed_kmh < 0) fail("speed must be non-negative");
  if (time_step_s <= 0) fail("time step must be positive");
  if (timestamps < 1) fail("need at least one timestamp");
  if (min_ue_distance_m <= 0) fail("minimum distance must be positive");
  if (max_cell_radius_m < min_ue_distance_m) fail("cell radius below minimum distance");
  if (k_factor_std_db < 0) fail("K-factor spread must be non-negative");
  if (delay_spread_s <= 0) fail("delay spread must be positive");
  if (aod_sector_deg <= 0 || aod_sector_deg > 90) fail("departure sector must be in (0, 90] deg");
  if (intra_cluster_aod_std_deg < 0) fail("intra-cluster angle spread must be non-negative");
}

size_t PathSet::main_path_index() const {
  if (paths.empty()) throw DomainError("PathSet: empty");
  size_t best = 0;
  double best_mag = std::abs(paths[0].beta);
  for (size_t i = 1; i < paths.size(); ++i) {
    double m = std::abs(paths[i].beta);
    if (m > best_mag) {
      best_mag = m;
      best = i;
    }
  }
  return best;
}

double PathSet::min_delay_s() const {
  if (paths.empty()) throw DomainError("PathSet: empty");
  double d = paths[0].delay_s;
  for (const auto& p : paths) d = std::min(d, p.delay_s);
  return d;
}

double PathSet::total_power() const {
  double s = 0;
  for (const auto& p : paths) s += std::norm(p.beta);
  return s;
}

namespace {

constexpr double deg2rad(double d) { return d * kPi / 180.0; }

// K-factor draw, clipped to +-2 sigma so the line-of-sight path always
// dominates every individual scattered path.
double draw_k_linear(double mean_db, double std_db, Rng& rng) {
  double z = std::clamp(rng.normal(), -2.0, 2.0);
  return std::pow(10.0, (mean_db + std_db * z) / 10.0);
}

} // namespace

PathSet sample_paths(const ScenarioConfig& cfg, Rng& rng) {
  cfg.validate();

  PathSet ps;
  ps.los = true;
  ps.ue_distance_m = rng.uniform(cfg.min_ue_distance_m, cfg.max_cell_radius_m);
  const double tau0 = ps.ue_distance_m / kSpeedOfLight;
  const double k_lin = draw_k_linear(cfg.sub6_k_factor_db, cfg.k_factor_std_db, rng);
  const double fd_max = cfg.ue_speed_ms() * cfg.sub6_carrier_hz / kSpeedOfLight;
  const double sector = deg2rad(cfg.aod_sector_deg);
  const double intra_std = deg2rad(cfg.intra_cluster_aod_std_deg);
  const double aod_limit = kPi / 2 - 1e-3;
  const double aod_los = rng.uniform(-sector, sector);

  const int n_total = cfg.clusters * cfg.paths_per_cluster;
  ps.paths.reserve(size_t(n_total));

  // Path 0 is the line of sight; it carries the Ricean power share and the
  // propagation delay of the direct geometry.
  {
    Path los;
    los.delay_s = tau0;
    los.aod_rad = aod_los;
    los.doppler_hz = fd_max * std::cos(rng.uniform(0.0, 2 * kPi));
    los.phase_rad = rng.uniform(0.0, 2 * kPi);
    double chi = rng.uniform(0.0, 2 * kPi);
    double mag = std::sqrt(k_lin / (k_lin + 1.0));
    los.beta = {mag * std::cos(chi), mag * std::sin(chi)};
    ps.paths.push_back(los);
  }

  // Scattered paths grouped in clusters. Cluster 0 surrounds the direct path
  // (no extra cluster delay); the rest get independent centers and exponential
  // excess delays. Weights decay with excess delay and are normalized to the
  // scattered power share afterwards.
  std::vector<double> weights;
  weights.reserve(size_t(n_total - 1));
  for (int n = 0; n < cfg.clusters; ++n) {
    double center_aod = (n == 0) ? aod_los : rng.uniform(-sector, sector);
    double cluster_excess = (n == 0) ? 0.0 : rng.exponential(cfg.delay_spread_s);
    int count = (n == 0) ? cfg.paths_per_cluster - 1 : cfg.paths_per_cluster;
    for (int p = 0; p < count; ++p) {
      Path sp;
      double excess = cluster_excess + rng.exponential(cfg.delay_spread_s * 0.1);
      sp.delay_s = tau0 + excess;
      sp.aod_rad = std::clamp(center_aod + rng.normal(0.0, intra_std), -aod_limit, aod_limit);
      sp.doppler_hz = fd_max * std::cos(rng.uniform(0.0, 2 * kPi));
      sp.phase_rad = rng.uniform(0.0, 2 * kPi);
      double chi = rng.uniform(0.0, 2 * kPi);
      sp.beta = {std::cos(chi), std::sin(chi)}; // magnitude set below
      ps.paths.push_back(sp);
      weights.push_back(std::exp(-excess / cfg.delay_spread_s));
    }
  }

  double wsum = 0;
  for (double w : weights) wsum += w;
  const double scattered_power = 1.0 / (k_lin + 1.0);
  for (size_t i = 0; i < weights.size(); ++i) {
    double mag = std::sqrt(weights[i] / wsum * scattered_power);
    ps.paths[i + 1].beta *= mag;
  }
  return ps;
}

std::vector<cdouble> steering_vector(double theta_rad, double f_hz, int n_ant, double spacing_wl) {
  if (n_ant < 1) throw ConfigError("steering_vector: n_ant must be at least 1");
  if (f_hz <= 0) throw ConfigError("steering_vector: frequency must be positive");
  if (spacing_wl <= 0) throw ConfigError("steering_vector: spacing must be positive");
  // physical spacing implied by `spacing_wl` wavelengths at f
  const double d_m = spacing_wl * kSpeedOfLight / f_hz;
  const double step = 2 * kPi * f_hz * d_m * std::sin(theta_rad) / kSpeedOfLight;
  std::vector<cdouble> a(static_cast<size_t>(n_ant));
  for (int m = 0; m < n_ant; ++m) a[size_t(m)] = {std::cos(step * m), std::sin(step * m)};
  return a;
}

CsiTensor synthesize_csi(const PathSet& paths, const ScenarioConfig& cfg, Band band,
                         const std::vector<int>& t_indices, const std::vector<int>& k_indices) {
  cfg.validate();
  if (paths.paths.empty()) throw DomainError("synthesize_csi: empty path set");
  if (t_indices.empty() || k_indices.empty())
    throw ShapeError("synthesize_csi: index lists must be non-empty");
  for (int i : t_indices)
    if (i < 0 || i >= cfg.timestamps) throw ShapeError("synthesize_csi: timestamp index out of range");
  for (int j : k_indices)
    if (j < 0 || j >= cfg.subcarriers) throw ShapeError("synthesize_csi: subcarrier index out of range");

  const int nt = cfg.antennas(band);
  const int T = int(t_indices.size());
  const int K = int(k_indices.size());
  const double df = cfg.subcarrier_spacing_hz(band);
  const double f1 = cfg.first_subcarrier_hz(band);

  CsiTensor h(T, K, nt, band);
  h.dt_s = cfg.time_step_s;
  h.df_hz = df;
  h.f1_hz = f1;

  std::vector<cdouble> steer(static_cast<size_t>(nt));
  std::vector<cdouble> tfac(static_cast<size_t>(T));
  std::vector<cdouble> ffac(static_cast<size_t>(K));

  for (const Path& p : paths.paths) {
    // Array response at the band carrier; the per-subcarrier frequency
    // dependence is carried entirely by the delay term below.
    const double step = 2 * kPi * cfg.antenna_spacing_wl * std::sin(p.aod_rad);
    for (int m = 0; m < nt; ++m) steer[size_t(m)] = {std::cos(step * m), std::sin(step * m)};

    for (int i = 0; i < T; ++i) {
      double ph = 2 * kPi * p.doppler_hz * (t_indices[size_t(i)] * cfg.time_step_s);
      tfac[size_t(i)] = {std::cos(ph), std::sin(ph)};
    }
    for (int j = 0; j < K; ++j) {
      double fj = f1 + k_indices[size_t(j)] * df;
      // phases reach ~1e5 rad at mmWave; fine for double sin/cos
      double ph = -2 * kPi * fj * p.delay_s;
      ffac[size_t(j)] = {std::cos(ph), std::sin(ph)};
    }

    const cdouble g = p.beta * cdouble{std::cos(p.phase_rad), std::sin(p.phase_rad)};
    for (int i = 0; i < T; ++i) {
      const cdouble gt = g * tfac[size_t(i)];
      for (int j = 0; j < K; ++j) {
        const cdouble gtf = gt * ffac[size_t(j)];
        cdouble* row = &h.at(i, j, 0);
        for (int m = 0; m < nt; ++m) row[m] += gtf * steer[size_t(m)];
      }
    }
  }
  return h;
}

DualBandCsi make_dual_band(const PathSet& paths, const ScenarioConfig& cfg, Rng& rng) {
  cfg.validate();
  if (paths.paths.empty()) throw DomainError("make_dual_band: empty path set");

  std::vector<int> t_all(size_t(cfg.timestamps));
  for (int i = 0; i < cfg.timestamps; ++i) t_all[size_t(i)] = i;
  std::vector<int> k_all(size_t(cfg.subcarriers));
  for (int j = 0; j < cfg.subcarriers; ++j) k_all[size_t(j)] = j;

  DualBandCsi out;
  out.sub6 = synthesize_csi(paths, cfg, Band::Sub6, t_all, k_all);

  // Same geometry at mmWave: angles and delays carry over, Doppler scales
  // with carrier, small-scale phases and the Ricean balance are redrawn.
  PathSet mm = paths;
  const double doppler_scale = cfg.mm_carrier_hz / cfg.sub6_carrier_hz;
  const double k_mm = draw_k_linear(cfg.mm_k_factor_db, cfg.k_factor_std_db, rng);

  double scattered_old = 0.0;
  for (size_t i = 1; i < mm.paths.size(); ++i) scattered_old += std::norm(mm.paths[i].beta);
  const double scattered_new = 1.0 / (k_mm + 1.0);
  const double rescale = scattered_old > 0 ? std::sqrt(scattered_new / scattered_old) : 0.0;

  for (size_t i = 0; i < mm.paths.size(); ++i) {
    Path& p = mm.paths[i];
    p.doppler_hz *= doppler_scale;
    p.phase_rad = rng.uniform(0.0, 2 * kPi);
    double chi = rng.uniform(0.0, 2 * kPi);
    double mag = (i == 0) ? std::sqrt(k_mm / (k_mm + 1.0)) : std::abs(p.beta) * rescale;
    p.beta = {mag * std::cos(chi), mag * std::sin(chi)};
  }

  out.mm = synthesize_csi(mm, cfg, Band::MmWave, {0}, k_all);
  return out;
}

ScalarLabels derive_labels(const PathSet& paths) {
  if (paths.paths.empty()) throw DomainError("derive_labels: empty path set");
  ScalarLabels lab;
  lab.distance_m = kSpeedOfLight * paths.min_delay_s();
  double mag = std::abs(paths.paths[paths.main_path_index()].beta);
  if (mag <= 0) throw DomainError("derive_labels: main path has zero gain");
  lab.path_loss_db = -20.0 * std::log10(mag);
  return lab;
}

std::vector<cdouble> add_awgn(const std::vector<cdouble>& x, double snr_db, Rng& rng) {
  if (!std::isfinite(snr_db)) return x;
  std::vector<cdouble> y = x;
  if (x.empty()) return y;
  double power = 0.0;
  for (const auto& v : x) power += std::norm(v);
  power /= double(x.size());
  const double sigma2 = power / std::pow(10.0, snr_db / 10.0);
  const double s = std::sqrt(sigma2 / 2.0);
  for (auto& v : y) v += cdouble{s * rng.normal(), s * rng.normal()};
  return y;
}

} // namespace wm4
