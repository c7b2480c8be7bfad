// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#include "wm4/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace wm4 {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size < 1");
  if (epochs < 1) throw ConfigError("TrainConfig: epochs < 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs)
    throw ConfigError("TrainConfig: warmup must sit inside the epoch budget");
  if (cosine_period_epochs < 1) throw ConfigError("TrainConfig: cosine period < 1");
  if (!(lr_min < lr_max)) throw ConfigError("TrainConfig: lr_min must be < lr_max");
  if (dwa_temperature <= 0) throw ConfigError("TrainConfig: dwa_temperature <= 0");
  if (stage != 1 && stage != 2) throw ConfigError("TrainConfig: stage must be 1 or 2");
  if (val_every < 1) throw ConfigError("TrainConfig: val_every < 1");
}

json train_to_json(const TrainConfig& c) {
  json j;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["warmup_epochs"] = c.warmup_epochs;
  j["cosine_period_epochs"] = c.cosine_period_epochs;
  j["lr_min"] = c.lr_min;
  j["lr_max"] = c.lr_max;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["dwa_temperature"] = c.dwa_temperature;
  j["stage"] = c.stage;
  j["seed"] = c.seed;
  j["adapter_out_trainable_stage2"] = c.adapter_out_trainable_stage2;
  j["cache_stage2_tokens"] = c.cache_stage2_tokens;
  j["val_every"] = c.val_every;
  return j;
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.cosine_period_epochs = j.value("cosine_period_epochs", c.cosine_period_epochs);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.lr_max = j.value("lr_max", c.lr_max);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.dwa_temperature = j.value("dwa_temperature", c.dwa_temperature);
  c.stage = j.value("stage", c.stage);
  c.seed = j.value("seed", c.seed);
  c.adapter_out_trainable_stage2 =
      j.value("adapter_out_trainable_stage2", c.adapter_out_trainable_stage2);
  c.cache_stage2_tokens = j.value("cache_stage2_tokens", c.cache_stage2_tokens);
  c.val_every = j.value("val_every", c.val_every);
  return c;
}

double lr_schedule(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw DomainError("lr_schedule: negative epoch");
  if (epoch < cfg.warmup_epochs)
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * double(epoch) / double(cfg.warmup_epochs);
  int t = (epoch - cfg.warmup_epochs) % cfg.cosine_period_epochs;
  return cfg.lr_min +
         0.5 * (cfg.lr_max - cfg.lr_min) *
             (1.0 + std::cos(kPi * double(t) / double(cfg.cosine_period_epochs)));
}

std::vector<double> dwa_weights(const std::vector<std::vector<double>>& history,
                                double temperature) {
  size_t n = history.size();
  std::vector<double> w(n, 1.0);
  if (n == 0) return w;
  for (const auto& h : history)
    if (h.size() < 2) return w;
  std::vector<double> r(n);
  for (size_t i = 0; i < n; ++i) {
    double prev = history[i][history[i].size() - 2];
    double last = history[i][history[i].size() - 1];
    if (!(prev > 0) || !(last > 0) || !std::isfinite(prev) || !std::isfinite(last)) return w;
    r[i] = last / prev;
  }
  double mx = *std::max_element(r.begin(), r.end());
  double sum = 0;
  for (size_t i = 0; i < n; ++i) sum += (w[i] = std::exp((r[i] - mx) / temperature));
  for (double& v : w) v *= double(n) / sum;
  return w;
}

Var task_loss(TaskId task, const Var& pred, const Tensor& label_batch,
              const std::vector<int64_t>& class_labels, double eps) {
  if (task == TaskId::BF) return cross_entropy_loss(pred, class_labels);
  return nmse_loss(pred, label_batch, eps);
}

// --- the training loop --------------------------------------------------------------

namespace {

struct BatchView {
  std::vector<const TaskSample*> ptrs;
  Tensor labels; // stacked; unused for BF
  std::vector<int64_t> cls;
};

BatchView gather_batch(const std::vector<TaskSample>& samples, const std::vector<int64_t>& order,
                       int64_t lo, int64_t hi) {
  BatchView b;
  b.ptrs.reserve(size_t(hi - lo));
  for (int64_t i = lo; i < hi; ++i) b.ptrs.push_back(&samples[size_t(order[size_t(i)])]);
  const TaskSample& first = *b.ptrs.front();
  if (first.task == TaskId::BF) {
    for (auto* s : b.ptrs) b.cls.push_back(s->beam_index);
  } else {
    Shape per = first.label.shape();
    Shape full = {int64_t(b.ptrs.size())};
    full.insert(full.end(), per.begin(), per.end());
    b.labels = Tensor(full);
    int64_t n = first.label.numel();
    for (size_t i = 0; i < b.ptrs.size(); ++i)
      std::copy(b.ptrs[i]->label.data(), b.ptrs[i]->label.data() + n,
                b.labels.data() + int64_t(i) * n);
  }
  return b;
}

// Stage-2 adapter-in outputs, keyed by position within the training split.
struct TokenCache {
  bool enabled = false;
  std::array<std::vector<Tensor>, kNumTasks> rows;

  Tensor gather(const Wm4Model& model, TaskId t, const std::vector<const TaskSample*>& ptrs,
                const std::vector<TaskSample>& samples, const std::vector<int64_t>& order,
                int64_t lo) {
    auto& cache = rows[size_t(t)];
    if (cache.empty()) cache.resize(samples.size());
    int64_t L = model.config().tokens, d = model.config().d_model;
    Tensor out({int64_t(ptrs.size()), L, d});
    // fill misses in one batched pass
    std::vector<size_t> miss;
    for (size_t i = 0; i < ptrs.size(); ++i) {
      size_t pos = size_t(order[size_t(lo) + i]);
      if (cache[pos].numel() == 0) miss.push_back(i);
    }
    if (!miss.empty()) {
      NoGradGuard ng;
      std::vector<const TaskSample*> mp;
      for (size_t i : miss) mp.push_back(ptrs[i]);
      Var tok = model.adapter_in_forward(t, make_const(model.preprocess_batch(t, mp)));
      int64_t per = L * d;
      for (size_t k = 0; k < miss.size(); ++k) {
        size_t pos = size_t(order[size_t(lo) + int64_t(miss[k])]);
        cache[pos] = Tensor({L, d}, std::vector<double>(tok->val.data() + int64_t(k) * per,
                                                        tok->val.data() + int64_t(k + 1) * per));
      }
    }
    int64_t per = L * d;
    for (size_t i = 0; i < ptrs.size(); ++i) {
      size_t pos = size_t(order[size_t(lo) + i]);
      std::copy(cache[pos].data(), cache[pos].data() + per, out.data() + int64_t(i) * per);
    }
    return out;
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

} // namespace

TrainResult train_stage(Wm4Model& model, const DatasetBundle& data, const TrainConfig& cfg) {
  cfg.validate();
  model.apply_stage_freeze(cfg.stage, cfg.adapter_out_trainable_stage2);
  std::vector<Var> trainable = model.params().trainable();
  Adam opt(trainable, {cfg.beta1, cfg.beta2});

  int64_t n = int64_t(data.train.of(TaskId::CE).size());
  for (TaskId t : all_tasks())
    if (int64_t(data.train.of(t).size()) != n)
      throw DomainError("train_stage: task sample counts differ");
  if (n == 0) throw DomainError("train_stage: empty training split");

  TokenCache cache;
  cache.enabled = cfg.stage == 2 && cfg.cache_stage2_tokens;

  TrainResult res;
  std::vector<std::vector<double>> hist(kNumTasks);
  std::vector<Tensor> best_snapshot;
  double best_avg = std::numeric_limits<double>::infinity();

  int64_t nb = (n + cfg.batch_size - 1) / cfg.batch_size;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = lr_schedule(cfg, epoch);
    std::vector<double> w = dwa_weights(hist, cfg.dwa_temperature);

    std::array<std::vector<int64_t>, kNumTasks> order;
    for (TaskId t : all_tasks()) {
      auto& o = order[size_t(t)];
      o.resize(size_t(n));
      std::iota(o.begin(), o.end(), 0);
      Rng srng = Rng::child(cfg.seed + uint64_t(cfg.stage) * 0x10000000ull,
                            uint64_t(epoch) * kNumTasks + uint64_t(t));
      srng.shuffle(o);
    }

    std::array<double, kNumTasks> loss_sum{};
    std::array<int64_t, kNumTasks> loss_cnt{};
    for (int64_t b = 0; b < nb; ++b) {
      int64_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      for (TaskId t : all_tasks()) {
        const auto& samples = data.train.of(t);
        BatchView bv = gather_batch(samples, order[size_t(t)], lo, hi);
        Var pred;
        if (cache.enabled) {
          Tensor tok = cache.gather(model, t, bv.ptrs, samples, order[size_t(t)], lo);
          pred = model.forward_tokens(t, make_const(tok));
        } else {
          pred = model.forward(t, make_const(model.preprocess_batch(t, bv.ptrs)));
        }
        Var loss = task_loss(t, pred, bv.labels, bv.cls);
        double lval = loss->val[0];
        if (!std::isfinite(lval))
          throw DomainError("train_stage: non-finite loss (stage " + std::to_string(cfg.stage) +
                            " epoch " + std::to_string(epoch) + " task " + task_name(t) +
                            " batch " + std::to_string(b) + ")");
        loss_sum[size_t(t)] += lval;
        loss_cnt[size_t(t)] += 1;
        backward(scale(loss, w[size_t(t)]));
        opt.step(lr);
        zero_grads(trainable);
      }
    }

    std::string line = "stage=" + std::to_string(cfg.stage) + " epoch=" + std::to_string(epoch) +
                       " lr=" + fmt(lr);
    for (TaskId t : all_tasks()) {
      double mean_loss = loss_sum[size_t(t)] / double(loss_cnt[size_t(t)]);
      hist[size_t(t)].push_back(mean_loss);
      line += std::string(" loss_") + task_name(t) + "=" + fmt(mean_loss);
    }
    for (TaskId t : all_tasks())
      line += std::string(" w_") + task_name(t) + "=" + fmt(w[size_t(t)]);

    if ((epoch + 1) % cfg.val_every == 0 || epoch == cfg.epochs - 1) {
      MetricReport rep = evaluate_model(model, data, "val", SeConfig{}, cfg.batch_size);
      line += " val_avg=" + fmt(rep.avg);
      if (rep.avg < best_avg) {
        best_avg = rep.avg;
        res.best_epoch = epoch;
        res.best_val_avg = rep.avg;
        res.best_val_report = rep;
        best_snapshot.clear();
        for (const Var& p : model.params().all()) best_snapshot.push_back(p->val);
      }
    }
    res.log_lines.push_back(line);
  }

  if (!best_snapshot.empty()) {
    const auto& all = model.params().all();
    for (size_t i = 0; i < all.size(); ++i) all[i]->val = best_snapshot[i];
  }
  return res;
}

// --- checkpointing ---------------------------------------------------------------------

void save_checkpoint(const Wm4Model& model, const DatasetBundle& data, const TrainConfig& cfg,
                     const TrainResult& result, const std::string& dir) {
  make_dirs(dir);
  TensorArchive ar = model.params().to_archive();
  write_file(dir + "/params.wm4d", ar.serialize());

  json m;
  m["format"] = "wm4-checkpoint";
  m["version"] = 1;
  m["stage"] = cfg.stage;
  m["seed"] = cfg.seed;
  m["best_epoch"] = result.best_epoch;
  m["best_val_avg"] = std::isfinite(result.best_val_avg) ? json(result.best_val_avg) : json(nullptr);
  m["val_metrics"] = result.best_val_report.to_json();
  m["model"] = model_to_json(model.config());
  m["scenario"] = scenario_to_json(data.scenario);
  m["task"] = task_to_json(data.task_cfg);
  m["train"] = train_to_json(cfg);
  m["dataset_config_hash"] = hash_hex(data.config_hash());
  m["norm"] = {{"de_min", data.norm.de_min},
               {"de_max", data.norm.de_max},
               {"pe_min", data.norm.pe_min},
               {"pe_max", data.norm.pe_max}};
  m["params_hash"] = hash_hex(model.params().content_hash());
  write_file(dir + "/manifest.json", m.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& dir) {
  Checkpoint ck;
  ck.manifest = json::parse(read_file(dir + "/manifest.json"));
  if (ck.manifest.value("format", "") != "wm4-checkpoint")
    throw IoError("not a wm4 checkpoint: " + dir);
  ck.params = TensorArchive::parse(read_file(dir + "/params.wm4d"));
  return ck;
}

Wm4Model model_from_checkpoint(const Checkpoint& ck) {
  ModelConfig mc = model_from_json(ck.manifest.at("model"));
  ScenarioConfig sc = scenario_from_json(ck.manifest.at("scenario"));
  TaskConfig tc = task_from_json(ck.manifest.at("task"));
  Wm4Model model(mc, sc, tc);
  model.params().load_archive(ck.params, true);
  return model;
}

} // namespace wm4
