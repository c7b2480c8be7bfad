// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#pragma once

#include <array>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "wm4/channel.hpp"
#include "wm4/signal_ops.hpp"
#include "wm4/tensor.hpp"

namespace wm4 {

// The six channel-associated tasks. CE: comb-pilot channel estimation;
// CP: temporal prediction; PF: cross-band frequency prediction; BF: mmWave
// beam selection from sub-6 GHz observations; DE: distance estimation;
// PE: path-loss estimation.
enum class TaskId { CE, CP, PF, BF, DE, PE };

inline constexpr int kNumTasks = 6;
const std::array<TaskId, kNumTasks>& all_tasks();
const char* task_name(TaskId t);
TaskId task_from_name(const std::string& s);
bool task_is_reconstruction(TaskId t); // CE/CP/PF: tensor-to-tensor

// Slicing and label constants on top of a ScenarioConfig.
struct TaskConfig {
  int hist_timestamps = 16; // observation window; prediction = timestamps - hist
  int pilot_comb = 4;       // CE pilot stride over subcarriers
  int codebook_beams = 256; // mmWave beam dictionary size
  double bf_label_snr_db = 10.0; // SNR at which the best-beam label is defined
  double input_snr_db = std::numeric_limits<double>::infinity(); // noiseless default

  void validate(const ScenarioConfig& sc) const;
};

// One task instance. Channel tensors are stored real-valued with real and
// imaginary parts stacked along the last (antenna) axis, doubling it.
// Channel values are quantized through f32 at build time so that in-memory
// data is bit-identical to a save/load round trip.
struct TaskSample {
  TaskId task = TaskId::CE;
  int64_t sample_index = 0;
  Tensor input;
  Tensor label;               // empty for BF (classification target below)
  int64_t beam_index = -1;    // BF label
  double raw_scalar = 0.0;    // DE/PE label in physical units
  std::vector<cdouble> aux_mm; // BF only: true mmWave snapshot [K * Nt_mm]
};

struct NormStats {
  double de_min = 0, de_max = 0;
  double pe_min = 0, pe_max = 0;
};

struct SplitData {
  std::array<std::vector<TaskSample>, kNumTasks> by_task;
  std::vector<TaskSample>& of(TaskId t) { return by_task[size_t(t)]; }
  const std::vector<TaskSample>& of(TaskId t) const { return by_task[size_t(t)]; }
};

struct DatasetBundle {
  ScenarioConfig scenario;
  TaskConfig task_cfg;
  int64_t n_total = 0;
  std::array<double, 3> fractions{0.75, 0.08, 0.17};
  uint64_t seed = 0;
  NormStats norm;
  SplitData train, val, test;

  const SplitData& split(const std::string& name) const;
  std::array<int64_t, 3> split_counts() const;
  /// Hash of the generating configuration (scenario, task constants, counts,
  /// fractions, seed). Stable across processes.
  uint64_t config_hash() const;
};

/// Per-sample tensor dims (before batching). BF's label is a class index with
/// no tensor dims; DE/PE labels are [1].
Shape task_input_dims(TaskId t, const ScenarioConfig& sc, const TaskConfig& tc);
Shape task_label_dims(TaskId t, const ScenarioConfig& sc, const TaskConfig& tc);

// Config JSON round trips, canonical key order. Shared by dataset manifests,
// checkpoints and the command line front end.
nlohmann::json scenario_to_json(const ScenarioConfig& c);
ScenarioConfig scenario_from_json(const nlohmann::json& j);
nlohmann::json task_to_json(const TaskConfig& c);
TaskConfig task_from_json(const nlohmann::json& j);

// --- complex/real encoding ---------------------------------------------------

/// Complex tensor -> real tensor with the last dim doubled: [..., Nt] becomes
/// [..., 2*Nt] laid out [Re(0..Nt-1), Im(0..Nt-1)].
Tensor stack_complex(const std::vector<cdouble>& v, Shape complex_dims);
std::vector<cdouble> unstack_complex(const Tensor& t);

// --- builders -----------------------------------------------------------------

/// Comb-pilot estimation: input H[0:T, ::comb, :], label H[0:T, :, :].
TaskSample build_ce(const CsiTensor& h_sub6, const TaskConfig& tc);
/// Temporal prediction: input first T timestamps, label the remaining P.
TaskSample build_cp(const CsiTensor& h_sub6, const TaskConfig& tc);
/// Frequency prediction: lower half of the subcarriers -> upper half.
TaskSample build_pf(const CsiTensor& h_sub6, const TaskConfig& tc);
/// Beam selection: sub-6 snapshot in, exhaustive-search beam index as label.
TaskSample build_bf(const CsiTensor& h_sub6, const CsiTensor& h_mm, const Codebook& cb,
                    const TaskConfig& tc);
/// Scalar regression tasks; labels normalized later from training statistics.
TaskSample build_de(const CsiTensor& h_sub6, double x_d, const TaskConfig& tc);
TaskSample build_pe(const CsiTensor& h_sub6, double x_pl, const TaskConfig& tc);

/// Full dataset: n_total path draws -> six aligned task lists, split by sample
/// index into train/val/test, scalar labels min-max normalized from the
/// training split only.
DatasetBundle generate_dataset(const ScenarioConfig& sc, const TaskConfig& tc, int64_t n_total,
                               std::array<double, 3> fractions, uint64_t seed);

// --- serialization --------------------------------------------------------------

/// Writes manifest.json plus one tensor archive per task per split.
void save_dataset(const DatasetBundle& b, const std::string& dir);
DatasetBundle load_dataset(const std::string& dir);

} // namespace wm4
