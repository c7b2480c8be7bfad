// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#pragma once

#include <string>
#include <vector>

#include "wm4/evaluator.hpp"
#include "wm4/model.hpp"

namespace wm4 {

struct TrainConfig {
  int64_t batch_size = 64; // 512 at paper scale
  int epochs = 30;         // per stage; 250 at paper scale
  int warmup_epochs = 6;   // 50 at paper scale, scaled with the epoch budget
  int cosine_period_epochs = 12; // 100 at paper scale
  double lr_min = 1e-5;
  double lr_max = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double dwa_temperature = 2.0;
  int stage = 1; // 1 or 2
  uint64_t seed = 123;
  // The second stage freezes both adapters by default; this re-enables the
  // output adapters there.
  bool adapter_out_trainable_stage2 = false;
  // Stage 2 may reuse adapter-in outputs across epochs (they are frozen).
  bool cache_stage2_tokens = true;
  int val_every = 5; // epochs between validation passes (final epoch always runs)

  void validate() const;
};

nlohmann::json train_to_json(const TrainConfig& c);
TrainConfig train_from_json(const nlohmann::json& j);

/// Warm-up then cosine: linear lr_min -> lr_max over warmup_epochs, then
/// cosine cycles of cosine_period_epochs between lr_max and lr_min
/// (restarting at lr_max each period).
double lr_schedule(const TrainConfig& cfg, int epoch);

/// Loss-descent-ratio weights: r_n = L_n(e-1)/L_n(e-2),
/// w_n = N * exp(r_n/T) / sum_m exp(r_m/T). Fewer than two epochs of history
/// or a non-positive loss falls back to uniform (all ones).
std::vector<double> dwa_weights(const std::vector<std::vector<double>>& history, double temperature);

/// BF: mean cross-entropy; everything else: aggregate NMSE over the batch
/// (error energy over label energy, denominator guarded by eps).
Var task_loss(TaskId task, const Var& pred, const Tensor& label_batch,
              const std::vector<int64_t>& class_labels, double eps = 1e-12);

struct TrainResult {
  int best_epoch = -1;
  double best_val_avg = std::numeric_limits<double>::quiet_NaN();
  MetricReport best_val_report;
  std::vector<std::string> log_lines;
};

/// One training stage: round-robin homogeneous task batches, DWA-weighted
/// losses, Adam with the warmup+cosine schedule, periodic validation. The
/// model is left holding the best-validation-Avg parameters. Non-finite loss
/// aborts with a diagnostic naming stage, epoch, task and batch.
TrainResult train_stage(Wm4Model& model, const DatasetBundle& data, const TrainConfig& cfg);

// --- checkpointing ----------------------------------------------------------------

/// Writes dir/params.wm4d and dir/manifest.json (configs, stage, epoch, seed,
/// val metrics, dataset hash and normalization stats, parameter hash).
void save_checkpoint(const Wm4Model& model, const DatasetBundle& data, const TrainConfig& cfg,
                     const TrainResult& result, const std::string& dir);

struct Checkpoint {
  nlohmann::json manifest;
  TensorArchive params;
};

Checkpoint load_checkpoint(const std::string& dir);
/// Rebuilds the model recorded in the checkpoint manifest and loads weights.
Wm4Model model_from_checkpoint(const Checkpoint& ck);

} // namespace wm4
