// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#pragma once

#include <array>
#include <string>
#include <vector>

#include "wm4/model.hpp"

namespace wm4 {

struct TrainConfig; // trainer.hpp; ablation runs full training rounds

// Per-task evaluation results. Fields that do not apply to a task stay NaN
// (e.g. top1 for CE). se_bound_ok records whether every evaluated sample kept
// SE(prediction) <= SE(perfect CSI) + 1e-9.
struct TaskMetrics {
  double nmse = std::numeric_limits<double>::quiet_NaN();
  double mae = std::numeric_limits<double>::quiet_NaN();
  double top1 = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
  double se_perfect = std::numeric_limits<double>::quiet_NaN();
  bool se_bound_ok = true;
};

struct MetricReport {
  std::array<TaskMetrics, kNumTasks> per_task;
  double avg = std::numeric_limits<double>::quiet_NaN();
  std::string checkpoint_id; // parameter content hash, hex
  std::string dataset_hash;  // dataset config hash, hex

  TaskMetrics& of(TaskId t) { return per_task[size_t(t)]; }
  const TaskMetrics& of(TaskId t) const { return per_task[size_t(t)]; }
  nlohmann::json to_json() const;
  std::string to_table() const; // fixed-width text table
};

// --- scalar metrics ------------------------------------------------------------

/// Mean over samples of ||pred - truth||^2 / ||truth||^2. Rows are samples.
double nmse(const std::vector<Tensor>& pred, const std::vector<Tensor>& truth);
double mae(const std::vector<double>& pred, const std::vector<double>& truth);
/// Fraction of rows whose argmax equals the label.
double top1(const Tensor& logits, const std::vector<int64_t>& labels);

/// Composite score: mean of {NMSE(CE), NMSE(CP), NMSE(PF), 1-Acc(BF),
/// MAE(DE), NMSE(PE)}. Throws DomainError when one of the six is NaN.
double avg_metric(const MetricReport& r);

// --- model evaluation -------------------------------------------------------------

/// Runs the model over one split and fills every task's metrics. SE uses the
/// matched filter on predictions against true channels (reconstruction tasks)
/// and the chosen codeword against the true mmWave snapshot (BF), both the
/// per-subcarrier mean at cfg's noise power.
MetricReport evaluate_model(const Wm4Model& model, const DatasetBundle& data,
                            const std::string& split, const SeConfig& se_cfg = {},
                            int64_t batch_size = 64);

// --- non-learned baselines ----------------------------------------------------------

/// Interpolation baseline predictions for the reconstruction tasks.
/// CE: linear interpolation across the pilot comb (edge subcarriers take the
/// nearest pilot); CP: two-point linear extrapolation from the last observed
/// timestamps; PF: nearest-subcarrier extension of the observed half.
Tensor baseline_bi_predict(TaskId t, const TaskSample& s, const ScenarioConfig& sc,
                           const TaskConfig& tc);

/// Composite non-learned report: interpolation for CE/CP/PF, sub6-to-mm
/// codebook index mapping for BF, training-mean prediction for DE/PE.
MetricReport baseline_report(const DatasetBundle& data, const std::string& split,
                             const SeConfig& se_cfg = {});
/// Single-method rows for the baseline command: "bi" (all six, as above),
/// "codebook" (BF only), "ls" (CE only: least-squares pilots at ls_snr_db,
/// then the same interpolation).
MetricReport baseline_method_report(const DatasetBundle& data, const std::string& split,
                                    const std::string& method, double ls_snr_db = 10.0,
                                    const SeConfig& se_cfg = {});

// --- routing analysis ----------------------------------------------------------------

/// Pairwise Pearson correlation of per-task expert mixing vectors at one
/// layer. Zero-variance vectors yield NaN entries. Layer names come from
/// Wm4Model::moe_layer_names().
Tensor pearson_matrix(const std::vector<Wm4Model::ExpertRecord>& records,
                      const std::string& layer);

// --- ablations and efficiency ----------------------------------------------------------

struct AblationRow {
  std::string variant;
  double avg = 0.0;
  double increase_pct = 0.0; // vs the full variant
};

/// Applies a named variant to a base ModelConfig. Variants: "full",
/// "no_adapter_in", "no_adapter_out", "no_adapter", "no_backbone", "no_lora".
ModelConfig ablation_variant(const ModelConfig& base, const std::string& variant);
const std::vector<std::string>& ablation_variants();

/// Trains both stages per variant and evaluates on the test split.
std::vector<AblationRow> ablate(const ModelConfig& base_mc, const DatasetBundle& data,
                                const TrainConfig& stage1, const TrainConfig& stage2,
                                std::vector<std::string>* log = nullptr);
std::string ablation_table(const std::vector<AblationRow>& rows);

struct EfficiencyReport {
  int64_t trainable_params = 0; // under the current freeze mask
  int64_t total_params = 0;
  int64_t moe_params = 0;          // enumerated over "moe." tensors
  int64_t moe_params_closed_form = 0;
  double batch_forward_ms = 0.0; // median of >= 10 runs
  int64_t batch_size = 0;
  nlohmann::json to_json() const;
};

EfficiencyReport efficiency_report(Wm4Model& model, int64_t batch_size = 64, int runs = 11);

} // namespace wm4
