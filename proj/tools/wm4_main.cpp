// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors
//
// Command line front end: dataset generation, two-stage training, evaluation,
// baselines, ablations, expert-routing analysis, few-shot transfer and report
// printing. Every run directory gets a manifest embedding the full effective
// config and its hash; manifests carry no timestamps so reruns are
// byte-identical.

#include "wm4/evaluator.hpp"
#include "wm4/run_config.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>

namespace wm4 {
namespace {

using nlohmann::json;

std::vector<std::pair<std::string, std::string>> parse_overrides(
    const std::vector<std::string>& rest) {
  std::vector<std::pair<std::string, std::string>> out;
  for (size_t i = 0; i < rest.size(); ++i) {
    const std::string& tok = rest[i];
    if (tok.rfind("--", 0) != 0 || tok.size() <= 2)
      throw ConfigError("unrecognized argument: " + tok);
    std::string key = tok.substr(2);
    std::string val;
    size_t eq = key.find('=');
    if (eq != std::string::npos) {
      val = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (++i >= rest.size()) throw ConfigError("override missing a value: " + tok);
      val = rest[i];
    }
    out.emplace_back(key, val);
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) make_dirs(p.parent_path().string());
  write_file(path, text);
}

void write_run_manifest(const std::string& run_dir, const std::string& command,
                        const RunConfig& cfg, const json& extra) {
  json m;
  m["format"] = "wm4-run";
  m["command"] = command;
  m["config"] = run_to_json(cfg);
  m["config_hash"] = hash_hex(run_config_hash(cfg));
  m["seed"] = cfg.seed;
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  write_text(run_dir + "/manifest.json", m.dump(2) + "\n");
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    out += l;
    out += '\n';
  }
  return out;
}

// --- commands ------------------------------------------------------------------------

int cmd_gen_data(const std::string& config_path, std::string out_dir,
                 const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg = load_run_config(config_path, overrides);
  if (out_dir.empty()) out_dir = dataset_cache_dir(cfg);
  std::string want = hash_hex(dataset_config_hash(cfg));
  if (std::filesystem::exists(out_dir + "/manifest.json")) {
    json m = json::parse(read_file(out_dir + "/manifest.json"));
    if (m.value("config_hash", "") == want) {
      std::printf("dataset_dir=%s\nconfig_hash=%s\nstatus=already-present\n", out_dir.c_str(),
                  want.c_str());
      return 0;
    }
    throw ConfigError("out dir holds a dataset with a different config: " + out_dir);
  }
  DatasetBundle b = generate_dataset(cfg.scenario, cfg.task, cfg.n_total, cfg.fractions, cfg.seed);
  save_dataset(b, out_dir);
  auto c = b.split_counts();
  std::printf("dataset_dir=%s\nconfig_hash=%s\ncounts train=%lld val=%lld test=%lld\n",
              out_dir.c_str(), want.c_str(), (long long)c[0], (long long)c[1], (long long)c[2]);
  return 0;
}

void run_one_stage(Wm4Model& model, const DatasetBundle& data, const RunConfig& cfg, int stage,
                   const std::string& run_dir) {
  TrainConfig tc = cfg.stage_cfg(stage);
  TrainResult r = train_stage(model, data, tc);
  std::string tag = "stage" + std::to_string(stage);
  save_checkpoint(model, data, tc, r, run_dir + "/checkpoints/" + tag);
  write_text(run_dir + "/logs/train_" + tag + ".log", join_lines(r.log_lines));
  json rep;
  rep["best_epoch"] = r.best_epoch;
  rep["val"] = r.best_val_report.to_json();
  write_text(run_dir + "/reports/val_" + tag + ".json", rep.dump(2) + "\n");
  std::printf("stage %d done: best_epoch=%d val_avg=%.6f checkpoint=%s\n", stage, r.best_epoch,
              r.best_val_avg, (run_dir + "/checkpoints/" + tag).c_str());
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& run_dir, const std::string& stage, const std::string& init_from,
              const std::vector<std::pair<std::string, std::string>>& overrides) {
  if (stage != "1" && stage != "2" && stage != "both")
    throw ConfigError("--stage must be 1, 2 or both");
  RunConfig cfg = load_run_config(config_path, overrides);
  std::vector<std::string> log;
  DatasetBundle data = obtain_dataset(cfg, data_dir, &log);
  for (const auto& l : log) std::printf("%s\n", l.c_str());

  write_run_manifest(run_dir, "train", cfg,
                     {{"stage", stage},
                      {"dataset_config_hash", hash_hex(data.config_hash())}});

  Wm4Model model = [&] {
    if (stage == "2") {
      if (init_from.empty()) throw ConfigError("train --stage 2 needs --init-from");
      return model_from_checkpoint(load_checkpoint(init_from));
    }
    if (!init_from.empty()) return model_from_checkpoint(load_checkpoint(init_from));
    return Wm4Model(cfg.model, data.scenario, data.task_cfg);
  }();

  if (stage == "1" || stage == "both") run_one_stage(model, data, cfg, 1, run_dir);
  if (stage == "2" || stage == "both") run_one_stage(model, data, cfg, 2, run_dir);
  return 0;
}

void require_norm_match(const json& ck_manifest, const DatasetBundle& data) {
  const json& n = ck_manifest.at("norm");
  bool ok = n.at("de_min").get<double>() == data.norm.de_min &&
            n.at("de_max").get<double>() == data.norm.de_max &&
            n.at("pe_min").get<double>() == data.norm.pe_min &&
            n.at("pe_max").get<double>() == data.norm.pe_max;
  if (!ok)
    throw ConfigError(
        "refusing to evaluate: dataset normalization statistics differ from those "
        "recorded in the checkpoint");
}

int cmd_eval(const std::string& ckpt_dir, const std::string& data_dir, const std::string& split,
             const std::string& out_path, bool with_efficiency) {
  Checkpoint ck = load_checkpoint(ckpt_dir);
  DatasetBundle data = load_dataset(data_dir);
  require_norm_match(ck.manifest, data);
  Wm4Model model = model_from_checkpoint(ck);
  MetricReport rep = evaluate_model(model, data, split);
  std::printf("%s", rep.to_table().c_str());
  json out;
  out["split"] = split;
  out["report"] = rep.to_json();
  out["checkpoint_params_hash"] = ck.manifest.value("params_hash", "");
  out["dataset_config_hash"] = hash_hex(data.config_hash());
  if (with_efficiency) {
    // count trainables under the freeze mask the checkpoint was trained with
    TrainConfig tcfg = train_from_json(ck.manifest.at("train"));
    model.apply_stage_freeze(tcfg.stage, tcfg.adapter_out_trainable_stage2);
    out["efficiency"] = efficiency_report(model).to_json();
    std::printf("trainable=%lld moe=%lld (closed form %lld)\n",
                (long long)out["efficiency"]["trainable_params"].get<int64_t>(),
                (long long)out["efficiency"]["moe_params"].get<int64_t>(),
                (long long)out["efficiency"]["moe_params_closed_form"].get<int64_t>());
  }
  if (!out_path.empty()) write_text(out_path, out.dump(2) + "\n");
  return 0;
}

int cmd_baseline(const std::string& config_path, const std::string& data_dir,
                 const std::string& method, const std::string& split, const std::string& out_path,
                 const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg = load_run_config(config_path, overrides);
  DatasetBundle data = obtain_dataset(cfg, data_dir, nullptr);
  MetricReport rep = baseline_method_report(data, split, method);
  std::printf("%s", rep.to_table().c_str());
  if (!out_path.empty()) {
    json out;
    out["method"] = method;
    out["split"] = split;
    out["report"] = rep.to_json();
    out["dataset_config_hash"] = hash_hex(data.config_hash());
    write_text(out_path, out.dump(2) + "\n");
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& run_dir,
               const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg = load_run_config(config_path, overrides);
  DatasetBundle data = obtain_dataset(cfg, data_dir, nullptr);
  write_run_manifest(run_dir, "ablate", cfg,
                     {{"dataset_config_hash", hash_hex(data.config_hash())}});
  std::vector<std::string> log;
  std::vector<AblationRow> rows = ablate(cfg.model, data, cfg.stage_cfg(1), cfg.stage_cfg(2), &log);
  std::string table = ablation_table(rows);
  std::printf("%s", table.c_str());
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"variant", r.variant}, {"avg", r.avg}, {"increase_pct", r.increase_pct}});
  write_text(run_dir + "/reports/ablation.json", out.dump(2) + "\n");
  write_text(run_dir + "/reports/ablation.txt", table);
  write_text(run_dir + "/logs/ablate.log", join_lines(log));
  return 0;
}

int cmd_analyze_experts(const std::string& ckpt_dir, const std::string& layer,
                        const std::string& out_path) {
  Wm4Model model = model_from_checkpoint(load_checkpoint(ckpt_dir));
  auto records = model.export_expert_weights();
  std::vector<std::string> layers = model.moe_layer_names();
  if (!layer.empty()) {
    if (std::find(layers.begin(), layers.end(), layer) == layers.end())
      throw ConfigError("unknown layer " + layer + "; available: " + [&] {
        std::string s;
        for (const auto& l : layers) s += (s.empty() ? "" : ", ") + l;
        return s;
      }());
    layers = {layer};
  }
  json out;
  for (const auto& name : layers) {
    Tensor m = pearson_matrix(records, name);
    std::printf("layer %s (pairwise Pearson of expert mixing vectors)\n%8s", name.c_str(), "");
    for (TaskId t : all_tasks()) std::printf("%8s", task_name(t));
    std::printf("\n");
    json rows = json::array();
    for (int64_t i = 0; i < kNumTasks; ++i) {
      std::printf("%8s", task_name(TaskId(i)));
      json row = json::array();
      for (int64_t j = 0; j < kNumTasks; ++j) {
        double v = m.data()[i * kNumTasks + j];
        std::printf("%8.4f", v);
        row.push_back(std::isfinite(v) ? json(v) : json(nullptr));
      }
      std::printf("\n");
      rows.push_back(row);
    }
    out[name] = rows;
  }
  if (!out_path.empty()) write_text(out_path, out.dump(2) + "\n");
  return 0;
}

DatasetBundle subsample_train(const DatasetBundle& full, double fraction, uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw ConfigError("--fraction must be in (0, 1]");
  DatasetBundle out = full;
  int64_t n = int64_t(full.train.of(TaskId::CE).size());
  int64_t keep = std::max<int64_t>(1, int64_t(std::llround(fraction * double(n))));
  std::vector<int64_t> pos(static_cast<size_t>(n));
  std::iota(pos.begin(), pos.end(), 0);
  Rng rng = Rng::child(seed, 0xf17e5ull);
  rng.shuffle(pos);
  pos.resize(size_t(keep));
  std::sort(pos.begin(), pos.end());
  for (TaskId t : all_tasks()) {
    std::vector<TaskSample> kept;
    kept.reserve(size_t(keep));
    for (int64_t p : pos) kept.push_back(full.train.of(t)[size_t(p)]);
    out.train.of(t) = std::move(kept);
  }
  return out;
}

int cmd_finetune(const std::string& ckpt_dir, const std::string& config_path,
                 const std::string& data_dir, double fraction, const std::string& run_dir,
                 const std::vector<std::pair<std::string, std::string>>& overrides) {
  Checkpoint ck = load_checkpoint(ckpt_dir);
  Wm4Model model = model_from_checkpoint(ck);
  RunConfig cfg = load_run_config(config_path, overrides);
  DatasetBundle data = obtain_dataset(cfg, data_dir, nullptr);

  write_run_manifest(run_dir, "finetune", cfg,
                     {{"dataset_config_hash", hash_hex(data.config_hash())},
                      {"fraction", fraction},
                      {"source_checkpoint_params_hash", ck.manifest.value("params_hash", "")}});

  MetricReport zero = evaluate_model(model, data, "test");
  std::printf("zero shot on target test split:\n%s", zero.to_table().c_str());

  DatasetBundle reduced = subsample_train(data, fraction, cfg.seed);
  TrainConfig tc = cfg.stage_cfg(2);
  TrainResult r = train_stage(model, reduced, tc);
  save_checkpoint(model, reduced, tc, r, run_dir + "/checkpoints/finetune");
  write_text(run_dir + "/logs/finetune.log", join_lines(r.log_lines));

  MetricReport after = evaluate_model(model, data, "test");
  std::printf("after transfer (%.0f%% of target training data):\n%s", fraction * 100.0,
              after.to_table().c_str());

  json rep;
  rep["fraction"] = fraction;
  rep["train_samples_used"] = int64_t(reduced.train.of(TaskId::CE).size());
  rep["zero_shot"] = zero.to_json();
  rep["finetuned"] = after.to_json();
  write_text(run_dir + "/reports/finetune.json", rep.dump(2) + "\n");
  return 0;
}

int cmd_report(const std::string& run_dir) {
  std::string mp = run_dir + "/manifest.json";
  if (!std::filesystem::exists(mp)) throw IoError("no manifest.json under " + run_dir);
  json m = json::parse(read_file(mp));
  std::printf("run %s\n  command=%s config_hash=%s seed=%llu\n", run_dir.c_str(),
              m.value("command", "?").c_str(), m.value("config_hash", "?").c_str(),
              (unsigned long long)m.value("seed", 0ull));
  std::string reports = run_dir + "/reports";
  if (std::filesystem::exists(reports)) {
    std::vector<std::string> names;
    for (const auto& e : std::filesystem::directory_iterator(reports))
      names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto& name : names) {
      std::printf("  report %s\n", name.c_str());
      if (name.size() < 5 || name.substr(name.size() - 5) != ".json") continue;
      json r = json::parse(read_file(reports + "/" + name));
      if (r.is_object() && r.contains("val") && r["val"].contains("avg"))
        std::printf("    best_epoch=%lld val_avg=%s\n", (long long)r.value("best_epoch", -1),
                    r["val"]["avg"].dump().c_str());
      else if (r.is_array())
        for (const auto& row : r)
          std::printf("    %-14s avg=%s increase_pct=%s\n",
                      row.value("variant", "?").c_str(), row["avg"].dump().c_str(),
                      row["increase_pct"].dump().c_str());
      else if (r.is_object() && r.contains("zero_shot"))
        std::printf("    zero_shot avg=%s finetuned avg=%s\n",
                    r["zero_shot"]["avg"].dump().c_str(), r["finetuned"]["avg"].dump().c_str());
      else if (r.is_object() && r.contains("report") && r["report"].contains("avg"))
        std::printf("    avg=%s\n", r["report"]["avg"].dump().c_str());
    }
  }
  std::string ckpts = run_dir + "/checkpoints";
  if (std::filesystem::exists(ckpts)) {
    std::vector<std::string> names;
    for (const auto& e : std::filesystem::directory_iterator(ckpts))
      names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto& name : names) {
      json cm = json::parse(read_file(ckpts + "/" + name + "/manifest.json"));
      std::printf("  checkpoint %s stage=%d params_hash=%s\n", name.c_str(),
                  cm.value("stage", 0), cm.value("params_hash", "?").c_str());
    }
  }
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"dual-band channel multi-task model toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, run_dir, stage = "both", init_from, ckpt_dir;
  std::string split = "test", method, layer, out_path;
  double fraction = 0.1;
  bool with_efficiency = false;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file; omit for built-in defaults");
    sub->allow_extras();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate and save a dataset");
  add_config(gen);
  gen->add_option("--out", out_dir, "output directory (default: the dataset cache)");

  CLI::App* train = app.add_subcommand("train", "train the model (stage 1, 2 or both)");
  add_config(train);
  train->add_option("--data", data_dir, "dataset directory (default: cache, generating if needed)");
  train->add_option("--out", run_dir, "run directory")->required();
  train->add_option("--stage", stage, "1, 2 or both (default both)");
  train->add_option("--init-from", init_from, "checkpoint to start from (required for --stage 2)");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  ev->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--split", split, "train, val or test (default test)");
  ev->add_option("--out", out_path, "write the JSON report here");
  ev->add_flag("--efficiency", with_efficiency, "include parameter counts and forward timing");

  CLI::App* base = app.add_subcommand("baseline", "non-learned reference methods");
  add_config(base);
  base->add_option("--data", data_dir, "dataset directory (default: cache, generating if needed)");
  base->add_option("--method", method, "bi, codebook or ls")->required();
  base->add_option("--split", split, "train, val or test (default test)");
  base->add_option("--out", out_path, "write the JSON report here");

  CLI::App* abl = app.add_subcommand("ablate", "train and score all architecture variants");
  add_config(abl);
  abl->add_option("--data", data_dir, "dataset directory (default: cache, generating if needed)");
  abl->add_option("--out", run_dir, "run directory")->required();

  CLI::App* ana = app.add_subcommand("analyze-experts", "expert routing correlation across tasks");
  ana->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
  ana->add_option("--layer", layer, "a single layer name (default: all layers)");
  ana->add_option("--out", out_path, "write the JSON matrices here");

  CLI::App* ft = app.add_subcommand("finetune", "transfer a checkpoint to a new dataset");
  add_config(ft);
  ft->add_option("--checkpoint", ckpt_dir, "source checkpoint")->required();
  ft->add_option("--data", data_dir, "target dataset directory (default: cache of --config)");
  ft->add_option("--fraction", fraction, "fraction of the target training split (default 0.1)");
  ft->add_option("--out", run_dir, "run directory")->required();

  CLI::App* rep = app.add_subcommand("report", "print a consolidated run summary");
  rep->add_option("--run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  auto overrides_of = [](CLI::App* sub) { return parse_overrides(sub->remaining()); };

  if (gen->parsed()) return cmd_gen_data(config_path, out_dir, overrides_of(gen));
  if (train->parsed())
    return cmd_train(config_path, data_dir, run_dir, stage, init_from, overrides_of(train));
  if (ev->parsed()) return cmd_eval(ckpt_dir, data_dir, split, out_path, with_efficiency);
  if (base->parsed())
    return cmd_baseline(config_path, data_dir, method, split, out_path, overrides_of(base));
  if (abl->parsed()) return cmd_ablate(config_path, data_dir, run_dir, overrides_of(abl));
  if (ana->parsed()) return cmd_analyze_experts(ckpt_dir, layer, out_path);
  if (ft->parsed())
    return cmd_finetune(ckpt_dir, config_path, data_dir, fraction, run_dir, overrides_of(ft));
  if (rep->parsed()) return cmd_report(run_dir);
  return 1;
}

} // namespace
} // namespace wm4

int main(int argc, char** argv) {
  auto fail = [](const char* type, const std::string& msg) {
    nlohmann::json e;
    e["error"] = {{"type", type}, {"message", msg}};
    std::fprintf(stderr, "%s\n", e.dump().c_str());
    return 1;
  };
  try {
    return wm4::run(argc, argv);
  } catch (const wm4::ConfigError& e) {
    return fail("config", e.what());
  } catch (const wm4::ShapeError& e) {
    return fail("shape", e.what());
  } catch (const wm4::DomainError& e) {
    return fail("domain", e.what());
  } catch (const wm4::IoError& e) {
    return fail("io", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
}
