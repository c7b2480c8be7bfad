// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#include "wm4/run_config.hpp"

#include <cstdlib>
#include <filesystem>

namespace wm4 {

using nlohmann::json;

TrainConfig RunConfig::stage_cfg(int stage) const {
  TrainConfig t;
  t.batch_size = batch_size;
  t.epochs = stage == 1 ? stage1_epochs : stage2_epochs;
  t.warmup_epochs = warmup_epochs;
  t.cosine_period_epochs = cosine_period_epochs;
  t.lr_min = lr_min;
  t.lr_max = lr_max;
  t.beta1 = beta1;
  t.beta2 = beta2;
  t.dwa_temperature = dwa_temperature;
  t.stage = stage;
  t.seed = train_seed != 0 ? train_seed : seed + 2;
  t.adapter_out_trainable_stage2 = adapter_out_trainable_stage2;
  t.cache_stage2_tokens = cache_stage2_tokens;
  t.val_every = val_every;
  return t;
}

void RunConfig::validate() const {
  scenario.validate();
  task.validate(scenario);
  model.validate();
  if (n_total < 1) throw ConfigError("RunConfig: n_total < 1");
  double fsum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(fsum - 1.0) > 1e-9) throw ConfigError("RunConfig: split fractions must sum to 1");
  stage_cfg(1).validate();
  stage_cfg(2).validate();
}

json run_to_json(const RunConfig& c) {
  json j;
  j["scenario"] = scenario_to_json(c.scenario);
  j["task"] = task_to_json(c.task);
  j["dataset"] = {{"n_total", c.n_total}, {"fractions", c.fractions}};
  j["seed"] = c.seed;
  j["model"] = model_to_json(c.model);
  j["train"] = {{"batch_size", c.batch_size},
                {"stage1_epochs", c.stage1_epochs},
                {"stage2_epochs", c.stage2_epochs},
                {"warmup_epochs", c.warmup_epochs},
                {"cosine_period_epochs", c.cosine_period_epochs},
                {"lr_min", c.lr_min},
                {"lr_max", c.lr_max},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"dwa_temperature", c.dwa_temperature},
                {"adapter_out_trainable_stage2", c.adapter_out_trainable_stage2},
                {"cache_stage2_tokens", c.cache_stage2_tokens},
                {"val_every", c.val_every},
                {"seed", c.train_seed != 0 ? c.train_seed : c.seed + 2}};
  return j;
}

RunConfig run_from_json(const json& j) {
  RunConfig c;
  c.seed = j.value("seed", c.seed);
  if (j.contains("scenario")) c.scenario = scenario_from_json(j.at("scenario"));
  if (j.contains("task")) c.task = task_from_json(j.at("task"));
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    c.n_total = d.value("n_total", c.n_total);
    if (d.contains("fractions")) {
      auto f = d.at("fractions").get<std::vector<double>>();
      if (f.size() != 3) throw ConfigError("dataset.fractions must have 3 entries");
      std::copy(f.begin(), f.end(), c.fractions.begin());
    }
  }
  c.model.init_seed = c.seed + 1;
  if (j.contains("model")) {
    ModelConfig base = c.model;
    c.model = model_from_json(j.at("model"));
    if (!j.at("model").contains("init_seed")) c.model.init_seed = base.init_seed;
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    c.batch_size = t.value("batch_size", c.batch_size);
    c.stage1_epochs = t.value("stage1_epochs", c.stage1_epochs);
    c.stage2_epochs = t.value("stage2_epochs", c.stage2_epochs);
    c.warmup_epochs = t.value("warmup_epochs", c.warmup_epochs);
    c.cosine_period_epochs = t.value("cosine_period_epochs", c.cosine_period_epochs);
    c.lr_min = t.value("lr_min", c.lr_min);
    c.lr_max = t.value("lr_max", c.lr_max);
    c.beta1 = t.value("beta1", c.beta1);
    c.beta2 = t.value("beta2", c.beta2);
    c.dwa_temperature = t.value("dwa_temperature", c.dwa_temperature);
    c.adapter_out_trainable_stage2 =
        t.value("adapter_out_trainable_stage2", c.adapter_out_trainable_stage2);
    c.cache_stage2_tokens = t.value("cache_stage2_tokens", c.cache_stage2_tokens);
    c.val_every = t.value("val_every", c.val_every);
    c.train_seed = t.value("seed", c.train_seed);
  }
  return c;
}

void apply_override(json& j, const std::string& dotted, const std::string& value) {
  if (dotted.empty()) throw ConfigError("empty override key");
  json* node = &j;
  size_t pos = 0;
  while (true) {
    size_t dot = dotted.find('.', pos);
    std::string key = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (key.empty()) throw ConfigError("bad override key: " + dotted);
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object() && !node->is_null())
      throw ConfigError("override path crosses a non-object: " + dotted);
    pos = dot + 1;
  }
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  json j = json::object();
  if (!path.empty()) {
    j = json::parse(read_file(path));
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object: " + path);
  }
  for (const auto& [key, value] : overrides) apply_override(j, key, value);
  RunConfig c = run_from_json(j);
  c.validate();
  return c;
}

uint64_t run_config_hash(const RunConfig& c) { return fnv1a64(run_to_json(c).dump()); }

uint64_t dataset_config_hash(const RunConfig& c) {
  DatasetBundle shell;
  shell.scenario = c.scenario;
  shell.task_cfg = c.task;
  shell.n_total = c.n_total;
  shell.fractions = c.fractions;
  shell.seed = c.seed;
  return shell.config_hash();
}

std::string dataset_cache_dir(const RunConfig& c) {
  const char* env = std::getenv("WM4_CACHE_DIR");
  std::string root = env && *env ? env : "wm4-cache";
  return root + "/ds-" + hash_hex(dataset_config_hash(c));
}

DatasetBundle obtain_dataset(const RunConfig& c, const std::string& data_dir,
                             std::vector<std::string>* log) {
  if (!data_dir.empty()) {
    if (log) log->push_back("dataset: loading " + data_dir);
    return load_dataset(data_dir);
  }
  std::string dir = dataset_cache_dir(c);
  if (std::filesystem::exists(dir + "/manifest.json")) {
    if (log) log->push_back("dataset: cache hit " + dir);
    return load_dataset(dir);
  }
  if (log) log->push_back("dataset: generating " + dir);
  DatasetBundle b = generate_dataset(c.scenario, c.task, c.n_total, c.fractions, c.seed);
  save_dataset(b, dir);
  return b;
}

} // namespace wm4
