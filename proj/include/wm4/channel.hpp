// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "wm4/common.hpp"
#include "wm4/rng.hpp"

namespace wm4 {

enum class Band { Sub6, MmWave };

// Scene and waveform parameters for one dual-band drop. Defaults are the desk
// profile: small urban cell, uniform linear arrays at both bands, OFDM grid
// shared between bands except for carrier/bandwidth/antenna count.
struct ScenarioConfig {
  // sub-6 GHz band (full space-time-frequency tensor)
  double sub6_carrier_hz = 1.9e9;
  double sub6_bandwidth_hz = 60e6;
  int sub6_antennas = 8;

  // mmWave band (single snapshot, beam selection)
  double mm_carrier_hz = 28e9;
  double mm_bandwidth_hz = 0.5e9;
  int mm_antennas = 64;

  int subcarriers = 64;
  double antenna_spacing_wl = 0.5; // in wavelengths at the band carrier

  int clusters = 21;
  int paths_per_cluster = 20;

  double ue_speed_kmh = 30.0;
  double time_step_s = 0.5e-3;
  int timestamps = 20; // history + horizon

  // geometry and large-scale statistics; short-range sectorized small cell.
  // The spread is kept tight on purpose: the drop ensemble then spans about
  // fifty complex space-frequency modes per snapshot, which fits through a
  // d_model=128 projection, and the line-of-sight delay stays resolvable from
  // a stride-4 pilot comb (distance span below c / (4 df) = 80 m).
  double min_ue_distance_m = 30.0;
  double max_cell_radius_m = 60.0;
  double sub6_k_factor_db = 10.0;  // Ricean K mean, line of sight
  double mm_k_factor_db = 13.0;
  double k_factor_std_db = 3.5;    // per-drop lognormal spread
  double delay_spread_s = 25e-9;   // exponential cluster excess delays
  double aod_sector_deg = 30.0;    // departure sector half-width
  double intra_cluster_aod_std_deg = 5.0;

  uint64_t seed = 1;

  double carrier_hz(Band b) const { return b == Band::Sub6 ? sub6_carrier_hz : mm_carrier_hz; }
  double bandwidth_hz(Band b) const { return b == Band::Sub6 ? sub6_bandwidth_hz : mm_bandwidth_hz; }
  int antennas(Band b) const { return b == Band::Sub6 ? sub6_antennas : mm_antennas; }
  double subcarrier_spacing_hz(Band b) const { return bandwidth_hz(b) / subcarriers; }
  double first_subcarrier_hz(Band b) const { return carrier_hz(b) - bandwidth_hz(b) / 2.0; }
  double ue_speed_ms() const { return ue_speed_kmh / 3.6; }

  /// Throws ConfigError on non-physical values.
  void validate() const;
};

// One propagation path. beta carries the gain magnitude and a random phase;
// phase_rad is the additional i.i.d. phase term of the sum-of-paths model.
struct Path {
  cdouble beta{0.0, 0.0};
  double doppler_hz = 0.0;
  double delay_s = 0.0;
  double phase_rad = 0.0;
  double aod_rad = 0.0;
};

struct PathSet {
  std::vector<Path> paths;
  double ue_distance_m = 0.0;
  bool los = false;

  size_t main_path_index() const; // strongest |beta|; DomainError when empty
  double min_delay_s() const;     // DomainError when empty
  double total_power() const;
};

// Channel frequency response over [timestamps, subcarriers, antennas],
// row-major, innermost index the antenna element.
struct CsiTensor {
  std::vector<cdouble> data;
  int t = 0, k = 0, nt = 0;
  Band band = Band::Sub6;
  double dt_s = 0.0;
  double df_hz = 0.0;
  double f1_hz = 0.0;

  CsiTensor() = default;
  CsiTensor(int t_, int k_, int nt_, Band b)
      : data(size_t(t_) * k_ * nt_), t(t_), k(k_), nt(nt_), band(b) {}

  cdouble& at(int i, int j, int m) { return data[(size_t(i) * k + j) * nt + m]; }
  const cdouble& at(int i, int j, int m) const { return data[(size_t(i) * k + j) * nt + m]; }
  size_t size() const { return data.size(); }
};

struct DualBandCsi {
  CsiTensor sub6; // [timestamps, K, sub6_antennas]
  CsiTensor mm;   // [1, K, mm_antennas] snapshot at the first timestamp
};

struct ScalarLabels {
  double distance_m = 0.0;
  double path_loss_db = 0.0;
};

/// Draws one multipath drop: LoS path plus clustered scattered paths.
/// Total power sums to one; the LoS path holds the Ricean power share and the
/// minimum delay.
PathSet sample_paths(const ScenarioConfig& cfg, Rng& rng);

/// Uniform linear array response: element m gets phase 2*pi*m*f*d*sin(theta)/c
/// where d is the physical spacing implied by `spacing_wl` wavelengths at f.
std::vector<cdouble> steering_vector(double theta_rad, double f_hz, int n_ant, double spacing_wl);

/// Sum-of-paths frequency response on the requested timestamp and subcarrier
/// index subsets (indices into the scenario's full grid). The paths are used
/// verbatim; band selects carrier, bandwidth and array size.
CsiTensor synthesize_csi(const PathSet& paths, const ScenarioConfig& cfg, Band band,
                         const std::vector<int>& t_indices, const std::vector<int>& k_indices);

/// Both bands from one drop: shared departure angles and delays, band-specific
/// Doppler scaling and K-factor. rng supplies the mmWave gain redraw.
DualBandCsi make_dual_band(const PathSet& paths, const ScenarioConfig& cfg, Rng& rng);

/// Distance and main-path loss labels. DomainError on an empty path set.
ScalarLabels derive_labels(const PathSet& paths);

/// Adds complex white Gaussian noise at the given SNR relative to the mean
/// power of x. A non-finite snr_db (e.g. +inf) returns x unchanged.
std::vector<cdouble> add_awgn(const std::vector<cdouble>& x, double snr_db, Rng& rng);

} // namespace wm4
