// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#pragma once

#include "wm4/tasks.hpp"
#include "wm4/trainer.hpp"

#include <string>
#include <utility>
#include <vector>

namespace wm4 {

// Everything one experiment needs, merged from a JSON config file plus dotted
// flag overrides (--train.lr_max 1e-3). The canonical JSON form is hashed and
// recorded in every output for provenance.
struct RunConfig {
  ScenarioConfig scenario;
  TaskConfig task;

  // dataset block
  int64_t n_total = 2000;
  std::array<double, 3> fractions{0.75, 0.08, 0.17};

  // root seed; model init and training seeds derive from it unless the
  // config sets them explicitly
  uint64_t seed = 2024;

  ModelConfig model;

  // train block, shared by both stages apart from the epoch counts
  int batch_size = 64;
  int stage1_epochs = 30;
  int stage2_epochs = 30;
  int warmup_epochs = 6;
  int cosine_period_epochs = 12;
  double lr_min = 1e-5;
  double lr_max = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double dwa_temperature = 2.0;
  bool adapter_out_trainable_stage2 = false;
  bool cache_stage2_tokens = true;
  int val_every = 5;
  uint64_t train_seed = 0; // 0 in the file means "derive from seed"

  TrainConfig stage_cfg(int stage) const;
  void validate() const;
};

nlohmann::json run_to_json(const RunConfig& c);
RunConfig run_from_json(const nlohmann::json& j);

/// Sets j at a dotted path ("train.lr_max") to the value parsed as JSON when
/// possible, as a string otherwise. Creates intermediate objects.
void apply_override(nlohmann::json& j, const std::string& dotted, const std::string& value);

/// Reads the config file (defaults when path is empty) and applies overrides
/// in order.
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides);

/// FNV hash of the canonical JSON dump of the full effective config.
uint64_t run_config_hash(const RunConfig& c);

/// Hash of just the dataset-defining part, matching DatasetBundle::config_hash
/// of a bundle generated from this config.
uint64_t dataset_config_hash(const RunConfig& c);

/// WM4_CACHE_DIR (default "wm4-cache") / ds-<dataset hash>.
std::string dataset_cache_dir(const RunConfig& c);

/// Loads the dataset from data_dir when given, otherwise from the cache,
/// generating and saving it there first if absent. Appends one-line notes to
/// log when provided.
DatasetBundle obtain_dataset(const RunConfig& c, const std::string& data_dir,
                             std::vector<std::string>* log = nullptr);

} // namespace wm4
