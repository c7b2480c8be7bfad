// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#include "wm4/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "wm4/trainer.hpp"

namespace wm4 {

using nlohmann::json;

static json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json MetricReport::to_json() const {
  json j;
  for (TaskId t : all_tasks()) {
    const TaskMetrics& m = of(t);
    json e;
    e["nmse"] = finite_or_null(m.nmse);
    e["mae"] = finite_or_null(m.mae);
    e["top1"] = finite_or_null(m.top1);
    e["se"] = finite_or_null(m.se);
    e["se_perfect"] = finite_or_null(m.se_perfect);
    e["se_bound_ok"] = m.se_bound_ok;
    j["tasks"][task_name(t)] = e;
  }
  j["avg"] = finite_or_null(avg);
  j["checkpoint_id"] = checkpoint_id;
  j["dataset_hash"] = dataset_hash;
  return j;
}

static std::string fmt_cell(double v) {
  if (!std::isfinite(v)) return "      -";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%7.4f", v);
  return buf;
}

std::string MetricReport::to_table() const {
  std::string s = "task     nmse     mae    top1      se  se_max\n";
  for (TaskId t : all_tasks()) {
    const TaskMetrics& m = of(t);
    s += std::string(task_name(t)) + "   " + fmt_cell(m.nmse) + " " + fmt_cell(m.mae) + " " +
         fmt_cell(m.top1) + " " + fmt_cell(m.se) + " " + fmt_cell(m.se_perfect) + "\n";
  }
  s += "avg  " + fmt_cell(avg) + "\n";
  return s;
}

// --- scalar metrics ---------------------------------------------------------------

double nmse(const std::vector<Tensor>& pred, const std::vector<Tensor>& truth) {
  if (pred.empty() || pred.size() != truth.size()) throw DomainError("nmse: empty or mismatched");
  double acc = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!pred[i].same_shape(truth[i])) throw ShapeError("nmse: sample shape mismatch");
    double num = 0, den = 0;
    const double* p = pred[i].data();
    const double* t = truth[i].data();
    for (int64_t k = 0; k < pred[i].numel(); ++k) {
      double d = p[k] - t[k];
      num += d * d;
      den += t[k] * t[k];
    }
    acc += num / std::max(den, 1e-300);
  }
  return acc / double(pred.size());
}

static double nmse_scalars(const std::vector<double>& pred, const std::vector<double>& truth) {
  // aggregate form: individual normalized labels may sit near zero
  if (pred.empty() || pred.size() != truth.size())
    throw DomainError("nmse_scalars: empty or mismatched");
  double num = 0, den = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double d = pred[i] - truth[i];
    num += d * d;
    den += truth[i] * truth[i];
  }
  return num / std::max(den, 1e-300);
}

double mae(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.empty() || pred.size() != truth.size()) throw DomainError("mae: empty or mismatched");
  double acc = 0;
  for (size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - truth[i]);
  return acc / double(pred.size());
}

double top1(const Tensor& logits, const std::vector<int64_t>& labels) {
  if (logits.rank() != 2 || size_t(logits.shape()[0]) != labels.size() || labels.empty())
    throw ShapeError("top1: logits [B, C] with one label per row required");
  int64_t b = logits.shape()[0], c = logits.shape()[1];
  int64_t hits = 0;
  for (int64_t i = 0; i < b; ++i) {
    const double* row = logits.data() + i * c;
    int64_t best = 0;
    for (int64_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    if (best == labels[size_t(i)]) ++hits;
  }
  return double(hits) / double(b);
}

double avg_metric(const MetricReport& r) {
  double parts[6] = {r.of(TaskId::CE).nmse, r.of(TaskId::CP).nmse, r.of(TaskId::PF).nmse,
                     1.0 - r.of(TaskId::BF).top1, r.of(TaskId::DE).mae, r.of(TaskId::PE).nmse};
  double acc = 0;
  for (double p : parts) {
    if (!std::isfinite(p)) throw DomainError("avg_metric: missing task metric");
    acc += p;
  }
  return acc / 6.0;
}

// --- spectral-efficiency scoring ------------------------------------------------------

// Mean-per-subcarrier SE of precoding with w_hat derived from pred against the
// true channel truth, both [rows, nt] complex. Returns {se, se_perfect}.
static std::pair<double, double> se_pair(const std::vector<cdouble>& pred,
                                         const std::vector<cdouble>& truth, int64_t nt,
                                         const SeConfig& cfg) {
  int64_t rows = int64_t(truth.size()) / nt;
  double se = 0, se_max = 0;
  for (int64_t r = 0; r < rows; ++r) {
    const cdouble* hp = pred.data() + r * nt;
    const cdouble* ht = truth.data() + r * nt;
    double pn = 0, tn = 0;
    for (int64_t m = 0; m < nt; ++m) {
      pn += std::norm(hp[m]);
      tn += std::norm(ht[m]);
    }
    cdouble dot{0, 0};
    if (pn > 1e-300) {
      double inv = 1.0 / std::sqrt(pn);
      for (int64_t m = 0; m < nt; ++m) dot += std::conj(ht[m]) * (hp[m] * inv);
    }
    se += std::log2(1.0 + std::norm(dot) / cfg.noise_power);
    se_max += std::log2(1.0 + tn / cfg.noise_power);
  }
  return {se / double(rows), se_max / double(rows)};
}

// --- model evaluation --------------------------------------------------------------

static std::vector<Tensor> predict_task(const Wm4Model& model, TaskId t,
                                        const std::vector<TaskSample>& samples,
                                        int64_t batch_size) {
  NoGradGuard ng;
  std::vector<Tensor> preds;
  preds.reserve(samples.size());
  for (size_t off = 0; off < samples.size(); off += size_t(batch_size)) {
    size_t hi = std::min(samples.size(), off + size_t(batch_size));
    std::vector<const TaskSample*> batch;
    for (size_t i = off; i < hi; ++i) batch.push_back(&samples[i]);
    Var x = make_const(model.preprocess_batch(t, batch));
    Var y = model.forward(t, x);
    const Tensor& out = y->val;
    int64_t per = out.numel() / out.shape()[0];
    Shape dims(out.shape().begin() + 1, out.shape().end());
    for (size_t i = 0; i < batch.size(); ++i) {
      preds.emplace_back(dims, std::vector<double>(out.data() + int64_t(i) * per,
                                                   out.data() + int64_t(i + 1) * per));
    }
  }
  return preds;
}

// Fills metrics for one reconstruction task given per-sample predictions.
static void score_reconstruction(TaskMetrics& m, const std::vector<Tensor>& preds,
                                 const std::vector<TaskSample>& samples, const SeConfig& se_cfg) {
  std::vector<Tensor> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  m.nmse = nmse(preds, labels);

  int64_t nt = samples[0].label.shape().back() / 2;
  double se = 0, se_max = 0;
  m.se_bound_ok = true;
  for (size_t i = 0; i < preds.size(); ++i) {
    auto [s, smax] = se_pair(unstack_complex(preds[i]), unstack_complex(labels[i]), nt, se_cfg);
    se += s;
    se_max += smax;
    if (s > smax + 1e-9) m.se_bound_ok = false;
  }
  m.se = se / double(preds.size());
  m.se_perfect = se_max / double(preds.size());
}

static void score_bf(TaskMetrics& m, const std::vector<int>& chosen,
                     const std::vector<TaskSample>& samples, const Codebook& cb,
                     const SeConfig& se_cfg, double top1_value) {
  m.top1 = top1_value;
  int64_t k = 0, nt = cb.n_antennas;
  double se = 0, se_max = 0;
  m.se_bound_ok = true;
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    k = int64_t(s.aux_mm.size()) / nt;
    double se_i = spectral_efficiency(s.aux_mm, int(k), int(nt), cb.column(chosen[i]), se_cfg) / double(k);
    auto [bi, best_se] = best_beam(s.aux_mm, int(k), int(nt), cb, se_cfg);
    (void)bi;
    double se_max_i = best_se / double(k);
    se += se_i;
    se_max += se_max_i;
    if (se_i > se_max_i + 1e-9) m.se_bound_ok = false;
  }
  m.se = se / double(samples.size());
  m.se_perfect = se_max / double(samples.size());
}

MetricReport evaluate_model(const Wm4Model& model, const DatasetBundle& data,
                            const std::string& split, const SeConfig& se_cfg,
                            int64_t batch_size) {
  const SplitData& sd = data.split(split);
  MetricReport rep;
  rep.checkpoint_id = hash_hex(model.params().content_hash());
  rep.dataset_hash = hash_hex(data.config_hash());

  for (TaskId t : all_tasks()) {
    const auto& samples = sd.of(t);
    if (samples.empty()) throw DomainError(std::string("evaluate_model: empty split for ") + task_name(t));
    std::vector<Tensor> preds = predict_task(model, t, samples, batch_size);
    TaskMetrics& m = rep.of(t);

    if (task_is_reconstruction(t)) {
      score_reconstruction(m, preds, samples, se_cfg);
    } else if (t == TaskId::BF) {
      Tensor logits({int64_t(samples.size()), int64_t(preds[0].numel())});
      std::vector<int64_t> labels(samples.size());
      std::vector<int> chosen(samples.size());
      for (size_t i = 0; i < samples.size(); ++i) {
        const double* row = preds[i].data();
        int64_t c = preds[i].numel();
        std::copy(row, row + c, logits.data() + int64_t(i) * c);
        labels[i] = samples[i].beam_index;
        int best = 0;
        for (int64_t j = 1; j < c; ++j)
          if (row[j] > row[best]) best = int(j);
        chosen[i] = best;
      }
      Codebook cb = dft_codebook(data.scenario.mm_antennas, data.task_cfg.codebook_beams,
                                 data.scenario.antenna_spacing_wl);
      score_bf(m, chosen, samples, cb, se_cfg, top1(logits, labels));
    } else {
      std::vector<double> p(samples.size()), l(samples.size());
      for (size_t i = 0; i < samples.size(); ++i) {
        p[i] = preds[i][0];
        l[i] = samples[i].label[0];
      }
      if (t == TaskId::DE) m.mae = mae(p, l);
      else m.nmse = nmse_scalars(p, l);
    }
  }
  rep.avg = avg_metric(rep);
  return rep;
}

// --- baselines ------------------------------------------------------------------------

Tensor baseline_bi_predict(TaskId t, const TaskSample& s, const ScenarioConfig& sc,
                           const TaskConfig& tc) {
  std::vector<cdouble> in = unstack_complex(s.input);
  int64_t nt = sc.sub6_antennas;

  if (t == TaskId::CE) {
    int64_t T = tc.hist_timestamps, kp = sc.subcarriers / tc.pilot_comb, K = sc.subcarriers;
    int comb = tc.pilot_comb;
    std::vector<cdouble> out(size_t(T * K * nt));
    for (int64_t i = 0; i < T; ++i)
      for (int64_t k = 0; k < K; ++k) {
        int64_t lo = std::min<int64_t>(k / comb, kp - 1);
        int64_t hi = std::min<int64_t>(lo + 1, kp - 1);
        double w = (double(k) - double(lo * comb)) / double(comb);
        if (k >= (kp - 1) * comb) w = 0.0, lo = kp - 1, hi = kp - 1; // edge: nearest pilot
        for (int64_t m = 0; m < nt; ++m) {
          cdouble a = in[size_t((i * kp + lo) * nt + m)];
          cdouble b = in[size_t((i * kp + hi) * nt + m)];
          out[size_t((i * K + k) * nt + m)] = a * (1.0 - w) + b * w;
        }
      }
    return stack_complex(out, {T, K, nt});
  }
  if (t == TaskId::CP) {
    int64_t T = tc.hist_timestamps, P = sc.timestamps - tc.hist_timestamps, K = sc.subcarriers;
    std::vector<cdouble> out(size_t(P * K * nt));
    for (int64_t i = 0; i < P; ++i)
      for (int64_t k = 0; k < K; ++k)
        for (int64_t m = 0; m < nt; ++m) {
          cdouble h1 = in[size_t(((T - 1) * K + k) * nt + m)];
          cdouble h0 = in[size_t(((T - 2) * K + k) * nt + m)];
          out[size_t((i * K + k) * nt + m)] = h1 + (h1 - h0) * double(i + 1);
        }
    return stack_complex(out, {P, K, nt});
  }
  if (t == TaskId::PF) {
    int64_t T = tc.hist_timestamps, half = sc.subcarriers / 2;
    std::vector<cdouble> out(size_t(T * half * nt));
    for (int64_t i = 0; i < T; ++i)
      for (int64_t k = 0; k < half; ++k)
        for (int64_t m = 0; m < nt; ++m)
          out[size_t((i * half + k) * nt + m)] = in[size_t((i * half + (half - 1)) * nt + m)];
    return stack_complex(out, {T, half, nt});
  }
  throw DomainError("baseline_bi_predict: reconstruction tasks only");
}

static double train_mean_label(const DatasetBundle& data, TaskId t) {
  const auto& v = data.train.of(t);
  double acc = 0;
  for (const auto& s : v) acc += s.label[0];
  return acc / double(v.size());
}

MetricReport baseline_report(const DatasetBundle& data, const std::string& split,
                             const SeConfig& se_cfg) {
  const SplitData& sd = data.split(split);
  MetricReport rep;
  rep.checkpoint_id = "baseline";
  rep.dataset_hash = hash_hex(data.config_hash());

  for (TaskId t : {TaskId::CE, TaskId::CP, TaskId::PF}) {
    const auto& samples = sd.of(t);
    std::vector<Tensor> preds;
    preds.reserve(samples.size());
    for (const auto& s : samples)
      preds.push_back(baseline_bi_predict(t, s, data.scenario, data.task_cfg));
    score_reconstruction(rep.of(t), preds, samples, se_cfg);
  }

  {
    const auto& samples = sd.of(TaskId::BF);
    Codebook cb_mm = dft_codebook(data.scenario.mm_antennas, data.task_cfg.codebook_beams,
                                  data.scenario.antenna_spacing_wl);
    Codebook cb_sub = dft_codebook(data.scenario.sub6_antennas, data.task_cfg.codebook_beams,
                                   data.scenario.antenna_spacing_wl);
    std::vector<int> chosen(samples.size());
    int64_t hits = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
      std::vector<cdouble> h = unstack_complex(samples[i].input);
      chosen[i] = codebook_baseline_bf(h, data.scenario.subcarriers, data.scenario.sub6_antennas,
                                       cb_sub, cb_mm, se_cfg);
      if (chosen[i] == samples[i].beam_index) ++hits;
    }
    score_bf(rep.of(TaskId::BF), chosen, samples, cb_mm, se_cfg,
             double(hits) / double(samples.size()));
  }

  for (TaskId t : {TaskId::DE, TaskId::PE}) {
    const auto& samples = sd.of(t);
    double mu = train_mean_label(data, t);
    std::vector<double> p(samples.size(), mu), l(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) l[i] = samples[i].label[0];
    if (t == TaskId::DE) rep.of(t).mae = mae(p, l);
    else rep.of(t).nmse = nmse_scalars(p, l);
  }

  rep.avg = avg_metric(rep);
  return rep;
}

MetricReport baseline_method_report(const DatasetBundle& data, const std::string& split,
                                    const std::string& method, double ls_snr_db,
                                    const SeConfig& se_cfg) {
  if (method == "bi") return baseline_report(data, split, se_cfg);

  const SplitData& sd = data.split(split);
  MetricReport rep;
  rep.checkpoint_id = "baseline-" + method;
  rep.dataset_hash = hash_hex(data.config_hash());

  if (method == "codebook") {
    MetricReport full = baseline_report(data, split, se_cfg);
    rep.of(TaskId::BF) = full.of(TaskId::BF);
    return rep; // avg undefined: single task
  }
  if (method == "ls") {
    // least-squares estimates of the comb pilots from unit pilots at the
    // given SNR, then the interpolation used by the plain baseline
    const auto& samples = sd.of(TaskId::CE);
    Rng rng(777);
    std::vector<Tensor> preds;
    std::vector<TaskSample> noisy = samples;
    for (auto& s : noisy) {
      std::vector<cdouble> pil = unstack_complex(s.input);
      std::vector<cdouble> rx = add_awgn(pil, ls_snr_db, rng);
      std::vector<cdouble> est(rx.size());
      for (size_t i = 0; i < rx.size(); ++i) est[i] = ls_estimate(rx[i], cdouble{1.0, 0.0});
      Shape cd = s.input.shape();
      cd.back() /= 2;
      s.input = stack_complex(est, cd);
      preds.push_back(baseline_bi_predict(TaskId::CE, s, data.scenario, data.task_cfg));
    }
    score_reconstruction(rep.of(TaskId::CE), preds, samples, se_cfg);
    return rep;
  }
  throw ConfigError("baseline_method_report: unknown method " + method);
}

// --- routing analysis --------------------------------------------------------------------

Tensor pearson_matrix(const std::vector<Wm4Model::ExpertRecord>& records,
                      const std::string& layer) {
  std::array<const std::vector<double>*, kNumTasks> omega{};
  for (const auto& r : records)
    if (r.layer == layer) omega[size_t(r.task)] = &r.omega;
  for (TaskId t : all_tasks())
    if (!omega[size_t(t)]) throw DomainError("pearson_matrix: no record for layer " + layer);

  auto moments = [](const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    return std::pair<double, double>{mean, var};
  };

  Tensor out({kNumTasks, kNumTasks});
  for (int i = 0; i < kNumTasks; ++i)
    for (int j = 0; j < kNumTasks; ++j) {
      if (i == j) {
        out.data()[i * kNumTasks + j] = 1.0;
        continue;
      }
      const auto& a = *omega[size_t(i)];
      const auto& b = *omega[size_t(j)];
      auto [ma, va] = moments(a);
      auto [mb, vb] = moments(b);
      double cov = 0;
      for (size_t k = 0; k < a.size(); ++k) cov += (a[k] - ma) * (b[k] - mb);
      out.data()[i * kNumTasks + j] =
          (va > 0 && vb > 0) ? cov / std::sqrt(va * vb)
                             : std::numeric_limits<double>::quiet_NaN();
    }
  return out;
}

// --- ablations ------------------------------------------------------------------------------

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v = {"full",       "no_adapter_in", "no_adapter_out",
                                             "no_adapter", "no_backbone",   "no_lora"};
  return v;
}

ModelConfig ablation_variant(const ModelConfig& base, const std::string& variant) {
  ModelConfig mc = base;
  if (variant == "full") return mc;
  if (variant == "no_adapter_in") mc.use_adapter_in = false;
  else if (variant == "no_adapter_out") mc.use_adapter_out = false;
  else if (variant == "no_adapter") mc.use_adapter_in = mc.use_adapter_out = false;
  else if (variant == "no_backbone") mc.use_backbone = false;
  else if (variant == "no_lora") mc.use_moe = false;
  else throw ConfigError("unknown ablation variant: " + variant);
  return mc;
}

std::vector<AblationRow> ablate(const ModelConfig& base_mc, const DatasetBundle& data,
                                const TrainConfig& stage1, const TrainConfig& stage2,
                                std::vector<std::string>* log) {
  std::vector<AblationRow> rows;
  for (const std::string& v : ablation_variants()) {
    Wm4Model model(ablation_variant(base_mc, v), data.scenario, data.task_cfg);
    TrainConfig c1 = stage1;
    c1.stage = 1;
    TrainResult r1 = train_stage(model, data, c1);
    TrainConfig c2 = stage2;
    c2.stage = 2;
    TrainResult r2 = train_stage(model, data, c2);
    MetricReport rep = evaluate_model(model, data, "test");
    rows.push_back({v, rep.avg, 0.0});
    if (log) {
      log->push_back("variant=" + v + " test_avg=" + std::to_string(rep.avg));
      for (const auto& line : r1.log_lines) log->push_back("  [s1] " + line);
      for (const auto& line : r2.log_lines) log->push_back("  [s2] " + line);
    }
  }
  double full_avg = rows[0].avg;
  for (auto& r : rows) r.increase_pct = (r.avg / full_avg - 1.0) * 100.0;
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string s = "variant            avg    increase\n";
  for (const auto& r : rows) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-15s %7.4f %+9.2f%%\n", r.variant.c_str(), r.avg,
                  r.increase_pct);
    s += buf;
  }
  return s;
}

// --- efficiency -------------------------------------------------------------------------------

json EfficiencyReport::to_json() const {
  json j;
  j["trainable_params"] = trainable_params;
  j["total_params"] = total_params;
  j["moe_params"] = moe_params;
  j["moe_params_closed_form"] = moe_params_closed_form;
  j["batch_forward_ms"] = batch_forward_ms;
  j["batch_size"] = batch_size;
  return j;
}

EfficiencyReport efficiency_report(Wm4Model& model, int64_t batch_size, int runs) {
  EfficiencyReport r;
  r.total_params = model.params().count();
  r.trainable_params = model.params().count_trainable();
  r.moe_params = model.params().count("moe.");
  r.moe_params_closed_form = model.moe_param_count_closed_form();
  r.batch_size = batch_size;

  auto [tr, fr] = model.preprocessed_dims(TaskId::CE);
  Rng rng(9001);
  Tensor x = Tensor::randn({batch_size, tr, fr}, rng, 1.0);
  NoGradGuard ng;
  std::vector<double> times;
  for (int i = 0; i < std::max(runs, 10) + 1; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    Var y = model.forward(TaskId::CE, make_const(x));
    auto t1 = std::chrono::steady_clock::now();
    if (i == 0) continue; // warm-up
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  r.batch_forward_ms = times[times.size() / 2];
  return r;
}

} // namespace wm4
