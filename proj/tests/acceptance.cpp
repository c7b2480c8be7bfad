// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

// Release acceptance checks. Every check prints exactly one PASS/FAIL line
// with the measured numbers and the process exits nonzero if any check
// failed. Pass check ids on the command line to run a subset, e.g.
// `wm4_acceptance 3 5 12`. Check 9 trains the reference desk benchmark and
// takes the bulk of the runtime; everything else finishes in seconds.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "wm4/evaluator.hpp"
#include "wm4/trainer.hpp"

using namespace wm4;

namespace {

struct Outcome {
  bool pass = false;
  std::string note;
};

double now_s() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

// Small drop geometry keeps the exactness checks fast; the values are
// otherwise arbitrary.
ScenarioConfig tiny_scenario() {
  ScenarioConfig sc;
  sc.subcarriers = 8;
  sc.sub6_antennas = 2;
  sc.mm_antennas = 4;
  sc.clusters = 3;
  sc.paths_per_cluster = 2;
  sc.seed = 501;
  return sc;
}

TaskConfig tiny_task_cfg() {
  TaskConfig tc;
  tc.codebook_beams = 32;
  return tc;
}

ModelConfig tiny_model_cfg(int64_t layers) {
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_layers = layers;
  mc.n_heads = 2;
  mc.ffn_mult = 2;
  mc.tokens = 4;
  mc.res_blocks_per_stage = 1;
  mc.n_experts = 2;
  mc.lora_rank = 2;
  mc.lora_alpha = 4.0;
  mc.head_map_width = 4;
  mc.init_seed = 601;
  return mc;
}

// Reference desk benchmark dimensions (checks 9, 11, 12).
ModelConfig bench_model_cfg() {
  ModelConfig mc;
  mc.d_model = 128;
  mc.n_layers = 2;
  mc.n_heads = 4;
  mc.ffn_mult = 2;
  mc.tokens = 16;
  mc.res_blocks_per_stage = 0;
  mc.n_experts = 4;
  mc.lora_rank = 4;
  mc.lora_alpha = 8.0;
  mc.head_map_width = 8;
  mc.init_seed = 2027;
  return mc;
}

void perturb_params(const ParamStore& ps, uint64_t seed, double stddev, const std::string& prefix) {
  Rng rng(seed);
  for (const Var& v : ps.all()) {
    if (!prefix.empty() && v->name.rfind(prefix, 0) != 0) continue;
    for (double& x : v->val.vec()) x += stddev * rng.normal();
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

using Snapshot = std::map<std::string, std::vector<double>>;

Snapshot snap_prefix(const ParamStore& ps, const std::string& prefix) {
  Snapshot s;
  for (const Var& v : ps.with_prefix(prefix)) s[v->name] = v->val.vec();
  return s;
}

bool bits_equal(const Snapshot& a, const Snapshot& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, va] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second.size() != va.size()) return false;
    if (std::memcmp(va.data(), it->second.data(), va.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

uint64_t prefix_hash(const ParamStore& ps, const std::string& prefix) {
  uint64_t h = 1469598103934665603ull;
  for (const Var& v : ps.with_prefix(prefix)) {
    h ^= v->val.content_hash();
    h *= 1099511628211ull;
  }
  return h;
}

// --- 1: channel synthesis vs brute-force path sum ---------------------------

// Independent per-element evaluation through std::polar; shares nothing with
// the library synthesis loop beyond the declared sum-of-paths formula.
cdouble oracle_element(const PathSet& ps, const ScenarioConfig& cfg, Band band, int t_idx,
                       int k_idx, int m) {
  const double fj = cfg.first_subcarrier_hz(band) + k_idx * cfg.subcarrier_spacing_hz(band);
  cdouble acc{0.0, 0.0};
  for (const Path& p : ps.paths) {
    double phase = 2.0 * kPi * (p.doppler_hz * (t_idx * cfg.time_step_s) - fj * p.delay_s) +
                   p.phase_rad + 2.0 * kPi * m * cfg.antenna_spacing_wl * std::sin(p.aod_rad);
    acc += p.beta * std::polar(1.0, phase);
  }
  return acc;
}

PathSet random_paths(Rng& rng, int n) {
  PathSet ps;
  for (int i = 0; i < n; ++i) {
    Path p;
    p.beta = rng.cnormal();
    p.doppler_hz = rng.uniform(-200.0, 200.0);
    p.delay_s = rng.uniform(0.0, 1e-6);
    p.phase_rad = rng.uniform(0.0, 2 * kPi);
    p.aod_rad = rng.uniform(-1.2, 1.2);
    ps.paths.push_back(p);
  }
  ps.ue_distance_m = 50.0;
  return ps;
}

Outcome check_channel_oracle() {
  GemmPrecisionGuard guard(Precision::F64);
  double t0 = now_s();
  Rng rng(11001);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    ScenarioConfig cfg;
    cfg.subcarriers = 2 + int(rng.integer(5));
    cfg.timestamps = 2 + int(rng.integer(4));
    cfg.sub6_antennas = 1 + int(rng.integer(4));
    cfg.mm_antennas = 1 + int(rng.integer(4));
    Band band = trial % 2 == 0 ? Band::Sub6 : Band::MmWave;
    PathSet ps = random_paths(rng, 1 + int(rng.integer(10)));

    std::vector<int> t_idx, k_idx;
    for (int i = 0; i < cfg.timestamps; ++i) t_idx.push_back(i);
    for (int j = 0; j < cfg.subcarriers; ++j) k_idx.push_back(j);
    CsiTensor h = synthesize_csi(ps, cfg, band, t_idx, k_idx);

    double num = 0.0, den = 0.0;
    for (int i = 0; i < h.t; ++i)
      for (int j = 0; j < h.k; ++j)
        for (int m = 0; m < h.nt; ++m) {
          cdouble want = oracle_element(ps, cfg, band, i, j, m);
          num += std::norm(h.at(i, j, m) - want);
          den += std::norm(want);
        }
    if (den <= 0.0) return {false, "degenerate oracle instance"};
    worst = std::max(worst, std::sqrt(num / den));
  }
  double secs = now_s() - t0;
  bool pass = worst <= 1e-10 && secs < 10.0;
  return {pass, fmt("50 instances, worst rel err %.2e (bound 1e-10), %.2fs (bound 10s)", worst, secs)};
}

// --- 2: single-path phase ratio identities -----------------------------------

Outcome check_phase_ratios() {
  GemmPrecisionGuard guard(Precision::F64);
  Rng rng(11002);
  ScenarioConfig cfg;
  cfg.timestamps = 4;
  cfg.subcarriers = 4;
  cfg.sub6_antennas = 4;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    PathSet ps = random_paths(rng, 1);
    const Path& p = ps.paths[0];
    CsiTensor h = synthesize_csi(ps, cfg, Band::Sub6, {0, 1, 2, 3}, {0, 1, 2, 3});

    cdouble want_t = std::polar(1.0, 2 * kPi * p.doppler_hz * cfg.time_step_s);
    worst = std::max(worst, std::abs(h.at(1, 0, 0) / h.at(0, 0, 0) - want_t));

    cdouble want_f =
        std::polar(1.0, -2 * kPi * cfg.subcarrier_spacing_hz(Band::Sub6) * p.delay_s);
    worst = std::max(worst, std::abs(h.at(0, 1, 0) / h.at(0, 0, 0) - want_f));

    cdouble want_a = std::polar(1.0, 2 * kPi * cfg.antenna_spacing_wl * std::sin(p.aod_rad));
    worst = std::max(worst, std::abs(h.at(0, 0, 1) / h.at(0, 0, 0) - want_a));
  }
  return {worst <= 1e-9, fmt("100 paths, worst ratio err %.2e (bound 1e-9)", worst)};
}

// --- 3: zero second factor keeps the injected model an exact identity --------

Outcome check_zero_init_identity() {
  GemmPrecisionGuard guard(Precision::F64);
  ScenarioConfig sc = tiny_scenario();
  TaskConfig tc = tiny_task_cfg();
  ModelConfig mc = tiny_model_cfg(1);
  Wm4Model injected(mc, sc, tc);

  ModelConfig mc_plain = mc;
  mc_plain.use_moe = false;
  Wm4Model plain(mc_plain, sc, tc);

  // Arbitrary first factors and gates; the second factors forced to zero so
  // every expert update vanishes regardless of the mixing weights.
  perturb_params(injected.params(), 77001, 0.3, "moe.");
  for (const Var& v : injected.params().with_prefix("moe."))
    if (v->name.find(".B.") != std::string::npos) v->val.fill(0.0);
  plain.params().load_archive(injected.params().to_archive(), false);

  Rng rng(77002);
  double worst = 0.0;
  NoGradGuard ng;
  for (TaskId t : all_tasks()) {
    auto [tr, fr] = injected.preprocessed_dims(t);
    Tensor x = Tensor::randn({2, tr, fr}, rng);
    Var a = injected.forward(t, make_const(x));
    Var b = plain.forward(t, make_const(x));
    worst = std::max(worst, max_abs_diff(a->val, b->val));
  }
  return {worst <= 1e-12, fmt("six tasks, worst |diff| %.2e (bound 1e-12)", worst)};
}

// --- 4: analytic gradients vs central finite differences ---------------------

struct TaskBatchData {
  std::vector<const TaskSample*> samples;
  Tensor label_batch;
  std::vector<int64_t> class_labels;
};

TaskBatchData make_batch(const SplitData& split, TaskId t, int64_t n) {
  TaskBatchData b;
  const auto& v = split.of(t);
  n = std::min<int64_t>(n, int64_t(v.size()));
  for (int64_t i = 0; i < n; ++i) b.samples.push_back(&v[size_t(i)]);
  if (t == TaskId::BF) {
    for (const TaskSample* s : b.samples) b.class_labels.push_back(s->beam_index);
  } else {
    Shape bs{n};
    for (int64_t d : b.samples[0]->label.shape()) bs.push_back(d);
    b.label_batch = Tensor(bs);
    int64_t per = b.samples[0]->label.numel();
    for (int64_t i = 0; i < n; ++i)
      std::copy(b.samples[size_t(i)]->label.data(), b.samples[size_t(i)]->label.data() + per,
                b.label_batch.data() + i * per);
  }
  return b;
}

Outcome check_gradients() {
  GemmPrecisionGuard guard(Precision::F64);
  double t0 = now_s();

  // (a) one injected linear in isolation, full finite-difference sweep.
  double worst_a = 0.0;
  {
    Rng rng(88001);
    MoeLinear ml;
    ml.rank = 2;
    ml.alpha = 4.0;
    ml.w0 = make_param(Tensor::randn({4, 4}, rng, 0.5), "w0");
    ml.b0 = make_param(Tensor::randn({4}, rng, 0.2), "b0");
    for (int k = 0; k < 2; ++k) {
      ml.a.push_back(make_param(Tensor::randn({2, 4}, rng, 0.7), fmt("a%d", k)));
      ml.bm.push_back(make_param(Tensor::randn({4, 2}, rng, 0.7), fmt("bm%d", k)));
    }
    ml.gate = make_param(Tensor::randn({2, kNumTasks}, rng, 0.9), "gate");

    Tensor x = Tensor::randn({3, 5, 4}, rng);
    Tensor target = Tensor::randn({3, 5, 4}, rng);
    std::vector<Var> params{ml.w0, ml.b0, ml.a[0], ml.a[1], ml.bm[0], ml.bm[1], ml.gate};

    auto loss_val = [&]() {
      NoGradGuard ng;
      return nmse_loss(ml.forward(make_const(x), TaskId::CP), target)->val[0];
    };
    zero_grads(params);
    backward(nmse_loss(ml.forward(make_const(x), TaskId::CP), target));

    for (const Var& p : params) {
      for (int64_t i = 0; i < p->val.numel(); ++i) {
        double v = p->val[i];
        double h = 1e-5 * std::max(1.0, std::fabs(v));
        p->val[i] = v + h;
        double lp = loss_val();
        p->val[i] = v - h;
        double lm = loss_val();
        p->val[i] = v;
        double fd = (lp - lm) / (2 * h);
        double ad = p->has_grad ? p->grad[i] : 0.0;
        if (std::fabs(ad) < 1e-10 && std::fabs(fd) < 1e-10) continue;
        worst_a = std::max(worst_a, std::fabs(ad - fd) / std::max({std::fabs(ad), std::fabs(fd), 1e-8}));
      }
    }
  }

  // (b) miniature end-to-end model, strided sweep over every tensor.
  double worst_b = 0.0;
  int64_t checked = 0;
  {
    ScenarioConfig sc = tiny_scenario();
    TaskConfig tc = tiny_task_cfg();
    DatasetBundle data = generate_dataset(sc, tc, 8, {0.5, 0.25, 0.25}, 88002);
    Wm4Model model(tiny_model_cfg(1), sc, tc);
    // Kick every tensor off its init point so zero-initialized factors and
    // gates see a generic operating point, and lift the construction-time
    // backbone freeze so every backward function is exercised.
    perturb_params(model.params(), 88003, 0.05, "");
    model.params().set_all_trainable(true);

    std::array<TaskBatchData, kNumTasks> batches;
    std::array<Tensor, kNumTasks> xb;
    for (TaskId t : all_tasks()) {
      batches[size_t(t)] = make_batch(data.train, t, 3);
      xb[size_t(t)] = model.preprocess_batch(t, batches[size_t(t)].samples);
    }

    auto loss_val = [&](int only_task) {
      NoGradGuard ng;
      double total = 0.0;
      for (int ti = 0; ti < kNumTasks; ++ti) {
        if (only_task >= 0 && ti != only_task) continue;
        TaskId t = TaskId(ti);
        Var out = model.forward(t, make_const(xb[size_t(ti)]));
        total += task_loss(t, out, batches[size_t(ti)].label_batch,
                           batches[size_t(ti)].class_labels)->val[0];
      }
      return total;
    };

    {
      std::vector<Var> losses;
      for (int ti = 0; ti < kNumTasks; ++ti) {
        TaskId t = TaskId(ti);
        losses.push_back(task_loss(t, model.forward(t, make_const(xb[size_t(ti)])),
                                   batches[size_t(ti)].label_batch,
                                   batches[size_t(ti)].class_labels));
      }
      zero_grads(model.params().all());
      backward(weighted_sum(losses, std::vector<double>(kNumTasks, 1.0)));
    }

    // Task-owned tensors only move their own task's loss; the other terms
    // cancel inside the central difference, so those sweeps evaluate one task.
    auto owner = [](const std::string& name) {
      for (int ti = 0; ti < kNumTasks; ++ti) {
        std::string tn = task_name(TaskId(ti));
        if (name.rfind("adapter_in." + tn + ".", 0) == 0 ||
            name.rfind("adapter_out." + tn + ".", 0) == 0 ||
            name.rfind("head." + tn + ".", 0) == 0)
          return ti;
      }
      return -1;
    };

    for (const Var& p : model.params().all()) {
      int only = owner(p->name);
      int64_t n = p->val.numel();
      int64_t stride = std::max<int64_t>(1, n / 12);
      for (int64_t i = 0; i < n; i += stride) {
        double v = p->val[i];
        double h = 1e-5 * std::max(1.0, std::fabs(v));
        p->val[i] = v + h;
        double lp = loss_val(only);
        p->val[i] = v - h;
        double lm = loss_val(only);
        p->val[i] = v;
        double fd = (lp - lm) / (2 * h);
        double ad = p->has_grad ? p->grad[i] : 0.0;
        ++checked;
        // Both below the central-difference noise floor (loss roundoff / h)
        // counts as agreement; key biases have an exactly zero derivative.
        if (std::fabs(ad) < 1e-8 && std::fabs(fd) < 1e-8) continue;
        worst_b = std::max(worst_b, std::fabs(ad - fd) / std::max({std::fabs(ad), std::fabs(fd), 1e-8}));
      }
    }
  }

  double secs = now_s() - t0;
  bool pass = worst_a <= 1e-4 && worst_b <= 1e-3 && secs < 60.0;
  return {pass, fmt("isolated worst %.2e (bound 1e-4); end-to-end worst %.2e over %lld entries (bound 1e-3); %.1fs (bound 60s)",
                    worst_a, worst_b, (long long)checked, secs)};
}

// --- 5: gate simplex and single-expert degeneracy -----------------------------

Outcome check_gate_simplex() {
  GemmPrecisionGuard guard(Precision::F64);
  ScenarioConfig sc = tiny_scenario();
  TaskConfig tc = tiny_task_cfg();
  ModelConfig mc = tiny_model_cfg(2);
  mc.n_experts = 4;
  Wm4Model model(mc, sc, tc);
  perturb_params(model.params(), 99001, 1.0, "moe.");

  double worst_sum = 0.0, worst_neg = 0.0;
  for (const std::string& layer : model.moe_layer_names()) {
    const MoeLinear* ml = model.moe_layer(layer);
    if (ml == nullptr) return {false, "missing layer " + layer};
    for (TaskId t : all_tasks()) {
      std::vector<double> w = ml->gate_weights(t);
      double s = 0.0;
      for (double x : w) {
        s += x;
        worst_neg = std::min(worst_neg, x);
      }
      worst_sum = std::max(worst_sum, std::fabs(s - 1.0));
    }
  }

  // One expert degenerates to the plain low-rank update, merged and applied.
  Rng rng(99002);
  MoeLinear ml;
  ml.rank = 3;
  ml.alpha = 6.0;
  ml.w0 = make_param(Tensor::randn({5, 7}, rng, 0.4), "w0");
  ml.b0 = make_param(Tensor::randn({5}, rng, 0.2), "b0");
  ml.a.push_back(make_param(Tensor::randn({3, 7}, rng, 0.5), "a0"));
  ml.bm.push_back(make_param(Tensor::randn({5, 3}, rng, 0.5), "bm0"));
  ml.gate = make_param(Tensor::randn({1, kNumTasks}, rng, 1.0), "gate");

  Tensor merged = ml.merge_for_task(TaskId::PF);
  Tensor want = lora_delta(ml.a[0]->val, ml.bm[0]->val, ml.alpha);
  double d_merge = max_abs_diff(merged, want);

  NoGradGuard ng;
  Var x = make_const(Tensor::randn({4, 7}, rng));
  Var y = ml.forward(x, TaskId::PF);
  Tensor wd = ml.w0->val;
  for (int64_t i = 0; i < wd.numel(); ++i) wd[i] += merged[i];
  Var y2 = linear(x, make_const(wd), ml.b0);
  double d_fwd = max_abs_diff(y->val, y2->val);

  bool pass = worst_sum <= 1e-6 && worst_neg >= -1e-12 && d_merge <= 1e-12 && d_fwd <= 1e-12;
  return {pass, fmt("worst |sum-1| %.2e (bound 1e-6), min weight %.1e; single-expert merge diff %.2e, forward diff %.2e (bound 1e-12)",
                    worst_sum, worst_neg, d_merge, d_fwd)};
}

// --- 6: stage freeze contracts ------------------------------------------------

Outcome check_freeze_contracts() {
  GemmPrecisionGuard guard(Precision::F64);
  ScenarioConfig sc = tiny_scenario();
  TaskConfig tc = tiny_task_cfg();
  DatasetBundle data = generate_dataset(sc, tc, 24, {0.5, 0.25, 0.25}, 66001);
  Wm4Model model(tiny_model_cfg(1), sc, tc);

  TrainConfig s1;
  s1.batch_size = 6;
  s1.epochs = 2;
  s1.warmup_epochs = 1;
  s1.cosine_period_epochs = 1;
  s1.val_every = 1;
  s1.stage = 1;
  s1.seed = 66002;

  uint64_t base_hash0 = prefix_hash(model.params(), "backbone.");
  Snapshot backbone0 = snap_prefix(model.params(), "backbone.");
  Snapshot moe0 = snap_prefix(model.params(), "moe.");
  Snapshot adapters0 = snap_prefix(model.params(), "adapter_");
  train_stage(model, data, s1);

  bool backbone_fixed_1 = bits_equal(backbone0, snap_prefix(model.params(), "backbone."));
  bool moe_fixed_1 = bits_equal(moe0, snap_prefix(model.params(), "moe."));
  bool adapters_moved_1 = !bits_equal(adapters0, snap_prefix(model.params(), "adapter_"));

  TrainConfig s2 = s1;
  s2.stage = 2;
  s2.seed = 66003;
  Snapshot adapters1 = snap_prefix(model.params(), "adapter_");
  Snapshot moe1 = snap_prefix(model.params(), "moe.");
  train_stage(model, data, s2);

  bool backbone_fixed_2 = bits_equal(backbone0, snap_prefix(model.params(), "backbone."));
  bool adapters_fixed_2 = bits_equal(adapters1, snap_prefix(model.params(), "adapter_"));
  bool moe_moved_2 = !bits_equal(moe1, snap_prefix(model.params(), "moe."));
  uint64_t base_hash2 = prefix_hash(model.params(), "backbone.");

  bool pass = backbone_fixed_1 && moe_fixed_1 && adapters_moved_1 && backbone_fixed_2 &&
              adapters_fixed_2 && moe_moved_2 && base_hash0 == base_hash2;
  return {pass,
          fmt("stage1: backbone %s, experts %s, adapters %s; stage2: adapters %s, experts %s; base hash %016llx stable %s",
              backbone_fixed_1 ? "fixed" : "MOVED", moe_fixed_1 ? "fixed" : "MOVED",
              adapters_moved_1 ? "trained" : "STUCK", adapters_fixed_2 ? "fixed" : "MOVED",
              moe_moved_2 ? "trained" : "STUCK", (unsigned long long)base_hash0,
              base_hash0 == base_hash2 ? "yes" : "NO")};
}

// --- 7: composite metric hand rows ---------------------------------------------

Outcome check_avg_metric_rows() {
  auto row = [](double ce, double cp, double pf, double bf_acc, double de, double pe) {
    MetricReport r;
    r.of(TaskId::CE).nmse = ce;
    r.of(TaskId::CP).nmse = cp;
    r.of(TaskId::PF).nmse = pf;
    r.of(TaskId::BF).top1 = bf_acc;
    r.of(TaskId::DE).mae = de;
    r.of(TaskId::PE).nmse = pe;
    return fmt("%.3f", avg_metric(r));
  };
  std::string a = row(0.103, 0.106, 0.100, 0.904, 0.087, 0.028);
  std::string b = row(0.654, 1.796, 1.293, 0.288, 0.249, 0.204);
  bool pass = a == "0.087" && b == "0.818";
  return {pass, fmt("row one -> %s (want 0.087), row two -> %s (want 0.818)", a.c_str(), b.c_str())};
}

// --- 8: loss and schedule closed forms ------------------------------------------

Outcome check_closed_forms() {
  GemmPrecisionGuard guard(Precision::F64);
  NoGradGuard ng;
  Tensor logits({4, 256});
  std::vector<int64_t> labels{0, 17, 255, 128};
  double ce = cross_entropy_loss(make_const(logits), labels)->val[0];
  double d_ce = std::fabs(ce - std::log(256.0));

  std::vector<std::vector<double>> hist{{2.0, 2.0}, {1.0, 2.0}, {4.0, 2.0}};
  std::vector<double> w = dwa_weights(hist, 2.0);
  double r[3] = {2.0 / 2.0, 2.0 / 1.0, 2.0 / 4.0};
  double z = std::exp(r[0] / 2.0) + std::exp(r[1] / 2.0) + std::exp(r[2] / 2.0);
  double d_dwa = 0.0;
  for (int i = 0; i < 3; ++i)
    d_dwa = std::max(d_dwa, std::fabs(w[size_t(i)] - 3.0 * std::exp(r[i] / 2.0) / z));

  TrainConfig cfg;
  bool lr_ok = lr_schedule(cfg, 0) == cfg.lr_min && lr_schedule(cfg, cfg.warmup_epochs) == cfg.lr_max;

  bool pass = d_ce <= 1e-9 && d_dwa <= 1e-9 && lr_ok;
  return {pass, fmt("uniform-logit loss err %.1e, weight err %.1e (bounds 1e-9); schedule endpoints %s",
                    d_ce, d_dwa, lr_ok ? "exact" : "WRONG")};
}

// --- 9: desk benchmark beats the non-learned baselines ---------------------------

Outcome check_benchmark() {
  double t0 = now_s();
  GemmPrecisionGuard guard(Precision::F32);

  ScenarioConfig sc;
  sc.seed = 2026;
  TaskConfig tc;
  tc.input_snr_db = 15.0;
  fprintf(stderr, "  [9] generating dataset (n=2000)...\n");
  DatasetBundle data = generate_dataset(sc, tc, 2000, {0.75, 0.08, 0.17}, 2026);

  Wm4Model model(bench_model_cfg(), sc, tc);

  TrainConfig s1;
  s1.batch_size = 32;
  s1.epochs = 30;
  s1.warmup_epochs = 6;
  s1.cosine_period_epochs = 24;
  s1.lr_min = 1e-5;
  s1.lr_max = 1e-3;
  s1.stage = 1;
  s1.seed = 2028;
  s1.val_every = 5;
  fprintf(stderr, "  [9] stage 1 (%.0fs)...\n", now_s() - t0);
  train_stage(model, data, s1);
  TrainConfig s2 = s1;
  s2.stage = 2;
  fprintf(stderr, "  [9] stage 2 (%.0fs)...\n", now_s() - t0);
  train_stage(model, data, s2);

  fprintf(stderr, "  [9] evaluating (%.0fs)...\n", now_s() - t0);
  MetricReport m = evaluate_model(model, data, "test");
  MetricReport bi = baseline_report(data, "test");
  double secs = now_s() - t0;

  bool se_ok = true;
  for (int ti = 0; ti < kNumTasks; ++ti) se_ok = se_ok && m.per_task[size_t(ti)].se_bound_ok;
  double chance = 25.0 / 256.0;
  bool pass = m.of(TaskId::CE).nmse < bi.of(TaskId::CE).nmse &&
              m.of(TaskId::CP).nmse < bi.of(TaskId::CP).nmse &&
              m.of(TaskId::PF).nmse < bi.of(TaskId::PF).nmse &&
              m.of(TaskId::BF).top1 > chance &&
              m.of(TaskId::DE).mae < bi.of(TaskId::DE).mae &&
              m.of(TaskId::PE).nmse < bi.of(TaskId::PE).nmse && se_ok && secs <= 1200.0;
  return {pass,
          fmt("ce %.3f<%.3f cp %.3f<%.3f pf %.3f<%.3f bf %.3f>%.3f de %.3f<%.3f pe %.3f<%.3f se_ok %s %.0fs (bound 1200s)",
              m.of(TaskId::CE).nmse, bi.of(TaskId::CE).nmse, m.of(TaskId::CP).nmse,
              bi.of(TaskId::CP).nmse, m.of(TaskId::PF).nmse, bi.of(TaskId::PF).nmse,
              m.of(TaskId::BF).top1, chance, m.of(TaskId::DE).mae, bi.of(TaskId::DE).mae,
              m.of(TaskId::PE).nmse, bi.of(TaskId::PE).nmse, se_ok ? "yes" : "NO", secs)};
}

// --- 10: expert routing correlation matrix ---------------------------------------

Outcome check_routing_correlation() {
  GemmPrecisionGuard guard(Precision::F64);
  ScenarioConfig sc = tiny_scenario();
  TaskConfig tc = tiny_task_cfg();
  ModelConfig mc = tiny_model_cfg(2);
  mc.n_experts = 4;
  Wm4Model model(mc, sc, tc);
  perturb_params(model.params(), 10101, 1.0, "moe.");

  std::vector<std::string> layers = model.moe_layer_names();
  if (layers.size() < 2) return {false, "fewer than two injected layers"};

  double worst_sym = 0.0, worst_diag = 0.0, worst_range = 0.0;
  auto records = model.export_expert_weights();
  for (const std::string& layer : layers) {
    Tensor p = pearson_matrix(records, layer);
    if (p.shape() != Shape{kNumTasks, kNumTasks}) return {false, "bad matrix shape at " + layer};
    for (int i = 0; i < kNumTasks; ++i) {
      worst_diag = std::max(worst_diag, std::fabs(p[i * kNumTasks + i] - 1.0));
      for (int j = 0; j < kNumTasks; ++j) {
        double v = p[i * kNumTasks + j];
        if (!std::isfinite(v)) return {false, "non-finite entry at " + layer};
        worst_sym = std::max(worst_sym, std::fabs(v - p[j * kNumTasks + i]));
        worst_range = std::max(worst_range, std::fabs(v) - 1.0);
      }
    }
  }

  // Task-independent gate logits force identical mixing vectors, so every
  // pairwise correlation collapses to one.
  for (const Var& v : model.params().with_prefix("moe."))
    if (v->name.find(".gate") != std::string::npos)
      for (int64_t k = 0; k < v->val.dim(0); ++k)
        for (int64_t t = 0; t < v->val.dim(1); ++t) v->val[k * v->val.dim(1) + t] = 0.7 * double(k);
  double worst_forced = 0.0;
  records = model.export_expert_weights();
  for (const std::string& layer : layers) {
    Tensor p = pearson_matrix(records, layer);
    for (int64_t i = 0; i < p.numel(); ++i) worst_forced = std::max(worst_forced, std::fabs(p[i] - 1.0));
  }

  bool pass = worst_diag <= 1e-12 && worst_sym <= 1e-12 && worst_range <= 1e-12 &&
              worst_forced <= 1e-12;
  return {pass, fmt("%zu layers: diag err %.1e, asymmetry %.1e, range excess %.1e; forced-identical off-diag err %.1e (bounds 1e-12)",
                    layers.size(), worst_diag, worst_sym, worst_range, worst_forced)};
}

// --- 11: ablation grid and loss-increase table ------------------------------------

Outcome check_ablation() {
  GemmPrecisionGuard guard(Precision::F32);
  ScenarioConfig sc;
  sc.seed = 11011;
  TaskConfig tc;
  DatasetBundle data = generate_dataset(sc, tc, 120, {0.75, 0.08, 0.17}, 11011);

  ModelConfig mc = bench_model_cfg();
  mc.init_seed = 321;
  TrainConfig s1;
  s1.batch_size = 32;
  s1.epochs = 3;
  s1.warmup_epochs = 1;
  s1.cosine_period_epochs = 2;
  s1.stage = 1;
  s1.seed = 11012;
  s1.val_every = 3;
  TrainConfig s2 = s1;
  s2.stage = 2;

  std::vector<AblationRow> rows = ablate(mc, data, s1, s2);
  const std::vector<std::string>& want = ablation_variants();

  bool names_ok = rows.size() == want.size();
  for (size_t i = 0; names_ok && i < rows.size(); ++i) names_ok = rows[i].variant == want[i];
  bool full_zero = false;
  bool finite = true;
  for (const AblationRow& r : rows) {
    if (r.variant == "full") full_zero = r.increase_pct == 0.0;
    finite = finite && std::isfinite(r.avg) && std::isfinite(r.increase_pct);
  }
  std::string table = ablation_table(rows);
  bool table_ok = !table.empty() && table.find("full") != std::string::npos;

  bool pass = names_ok && full_zero && finite && table_ok;
  std::string note = fmt("%zu variants", rows.size());
  for (const AblationRow& r : rows) note += fmt(" %s %+.1f%%", r.variant.c_str(), r.increase_pct);
  note += full_zero ? "; full is the 0% reference" : "; FULL ROW NONZERO";
  return {pass, note};
}

// --- 12: trainable parameter accounting ---------------------------------------------

Outcome check_param_accounting() {
  ScenarioConfig sc;
  TaskConfig tc;
  ModelConfig mc = bench_model_cfg();
  Wm4Model model(mc, sc, tc);

  // Closed form recomputed from the dimensions alone: per wrapped linear
  // n_experts*r*(d_in+d_out) plus the gate table n_experts*n_tasks.
  int64_t want = 0;
  int64_t d = mc.d_model, f = mc.ffn_dim();
  want += mc.n_layers * (mc.n_experts * mc.lora_rank * (d + f) + mc.n_experts * kNumTasks);
  want += mc.n_layers * (mc.n_experts * mc.lora_rank * (f + d) + mc.n_experts * kNumTasks);

  model.params().set_all_trainable(false);
  model.params().set_trainable("moe.", true);
  GemmPrecisionGuard guard(Precision::F32);
  EfficiencyReport rep = efficiency_report(model, 16, 11);

  bool exact = rep.trainable_params == rep.moe_params_closed_form &&
               rep.moe_params == rep.moe_params_closed_form &&
               rep.moe_params_closed_form == model.moe_param_count_closed_form() &&
               rep.moe_params_closed_form == want;
  bool frozen_excluded = rep.trainable_params < rep.total_params && rep.trainable_params > 0;

  model.apply_stage_freeze(2, false);
  int64_t stage2 = model.params().count_trainable();
  bool stage2_ok = stage2 == model.params().count("moe.") + model.params().count("head.");

  bool pass = exact && frozen_excluded && stage2_ok && rep.batch_forward_ms > 0.0;
  return {pass, fmt("injected bank %lld == closed form %lld (hand %lld); total %lld; stage-2 trainable %lld %s; fwd %.1f ms/batch %lld",
                    (long long)rep.trainable_params, (long long)rep.moe_params_closed_form,
                    (long long)want, (long long)rep.total_params, (long long)stage2,
                    stage2_ok ? "ok" : "WRONG", rep.batch_forward_ms, (long long)rep.batch_size)};
}

} // namespace

int main(int argc, char** argv) {
  struct Check {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  std::vector<Check> checks{
      {1, "channel synthesis matches brute-force path sum", check_channel_oracle},
      {2, "single-path phase ratio identities", check_phase_ratios},
      {3, "zero-init low-rank injection is an exact identity", check_zero_init_identity},
      {4, "analytic gradients match finite differences", check_gradients},
      {5, "gate simplex and single-expert degeneracy", check_gate_simplex},
      {6, "stage freeze contracts hold bit-exact", check_freeze_contracts},
      {7, "composite metric hand rows", check_avg_metric_rows},
      {8, "loss and schedule closed forms", check_closed_forms},
      {9, "desk benchmark beats non-learned baselines", check_benchmark},
      {10, "expert routing correlation matrix", check_routing_correlation},
      {11, "ablation grid and loss-increase table", check_ablation},
      {12, "trainable parameter accounting", check_param_accounting},
  };

  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const Check& c : checks) {
    if (!wanted.empty() && wanted.count(c.id) == 0) continue;
    double t0 = now_s();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, fmt("exception: %s", e.what())};
    }
    if (!o.pass) ++failures;
    std::printf("[%2d/12] %s  %-52s (%6.1fs)  %s\n", c.id, o.pass ? "PASS" : "FAIL", c.name,
                now_s() - t0, o.note.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
