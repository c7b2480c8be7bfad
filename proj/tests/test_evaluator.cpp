// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#include "doctest.h"

#include "wm4/evaluator.hpp"
#include "wm4/trainer.hpp"

#include <cmath>
#include <cstdio>

using namespace wm4;

namespace {

ScenarioConfig tiny_scenario_e() {
  ScenarioConfig sc;
  sc.subcarriers = 16;
  sc.sub6_antennas = 2;
  sc.mm_antennas = 8;
  sc.clusters = 3;
  sc.paths_per_cluster = 4;
  return sc;
}

TaskConfig tiny_task_e() {
  TaskConfig tc;
  tc.codebook_beams = 16;
  return tc;
}

ModelConfig tiny_model_cfg_e() {
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.ffn_mult = 2;
  mc.tokens = 4;
  mc.res_blocks_per_stage = 1;
  mc.n_experts = 2;
  mc.lora_rank = 2;
  mc.lora_alpha = 4.0;
  mc.head_map_width = 4;
  mc.init_seed = 11;
  return mc;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

} // namespace

TEST_CASE("scalar metrics: hand-computed values and input checks") {
  std::vector<Tensor> pred = {Tensor({2}, {1, 2})};
  std::vector<Tensor> truth = {Tensor({2}, {1, 1})};
  CHECK(nmse(pred, truth) == doctest::Approx(0.5).epsilon(1e-15));
  // mean over samples, each individually normalized
  pred.push_back(Tensor({2}, {0, 0}));
  truth.push_back(Tensor({2}, {3, 4}));
  CHECK(nmse(pred, truth) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK_THROWS_AS(nmse({}, {}), DomainError);
  CHECK_THROWS_AS(nmse({Tensor({2})}, {Tensor({3})}), ShapeError);

  CHECK(mae({1.0, 2.0}, {1.5, 1.0}) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK_THROWS_AS(mae({1.0}, {1.0, 2.0}), DomainError);

  Tensor logits({3, 4}, {0, 1, 0, 0, 9, 1, 1, 1, 0, 0, 0, 2});
  CHECK(top1(logits, {1, 0, 2}) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(top1(logits, {1, 0}), ShapeError);
}

TEST_CASE("composite average matches the published verification rows") {
  MetricReport model_row;
  model_row.of(TaskId::CE).nmse = 0.103;
  model_row.of(TaskId::CP).nmse = 0.106;
  model_row.of(TaskId::PF).nmse = 0.100;
  model_row.of(TaskId::BF).top1 = 0.904;
  model_row.of(TaskId::DE).mae = 0.087;
  model_row.of(TaskId::PE).nmse = 0.028;
  double avg = avg_metric(model_row);
  CHECK(avg == doctest::Approx(0.52 / 6.0).epsilon(1e-12));
  CHECK(fmt3(avg) == "0.087");

  MetricReport interp_row;
  interp_row.of(TaskId::CE).nmse = 0.654;
  interp_row.of(TaskId::CP).nmse = 1.796;
  interp_row.of(TaskId::PF).nmse = 1.293;
  interp_row.of(TaskId::BF).top1 = 0.288;
  interp_row.of(TaskId::DE).mae = 0.249;
  interp_row.of(TaskId::PE).nmse = 0.204;
  double avg_bi = avg_metric(interp_row);
  CHECK(avg_bi == doctest::Approx(4.908 / 6.0).epsilon(1e-12));
  CHECK(fmt3(avg_bi) == "0.818");

  // any missing component is an error, not a silent skip
  MetricReport incomplete = model_row;
  incomplete.of(TaskId::PE).nmse = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(avg_metric(incomplete), DomainError);
}

TEST_CASE("interpolation baseline is exact on channels inside its model class") {
  ScenarioConfig sc = tiny_scenario_e();
  TaskConfig tc = tiny_task_e();
  // constant across subcarriers, linear in time: every prediction rule used
  // by the baseline reproduces such a channel exactly
  CsiTensor h(sc.timestamps, sc.subcarriers, sc.sub6_antennas, Band::Sub6);
  for (int i = 0; i < h.t; ++i)
    for (int j = 0; j < h.k; ++j)
      for (int m = 0; m < h.nt; ++m)
        h.at(i, j, m) = cdouble{0.3 + 0.1 * m, -0.2} + cdouble{0.01, 0.02 * (m + 1)} * double(i);

  TaskSample ce = build_ce(h, tc);
  Tensor pce = baseline_bi_predict(TaskId::CE, ce, sc, tc);
  CHECK(nmse({pce}, {ce.label}) <= 1e-24);

  TaskSample cp = build_cp(h, tc);
  Tensor pcp = baseline_bi_predict(TaskId::CP, cp, sc, tc);
  CHECK(nmse({pcp}, {cp.label}) <= 1e-20);

  TaskSample pf = build_pf(h, tc);
  Tensor ppf = baseline_bi_predict(TaskId::PF, pf, sc, tc);
  CHECK(nmse({ppf}, {pf.label}) <= 1e-24);

  CHECK_THROWS_AS(baseline_bi_predict(TaskId::DE, ce, sc, tc), DomainError);
}

TEST_CASE("baseline reports fill the documented tasks") {
  ScenarioConfig sc = tiny_scenario_e();
  TaskConfig tc = tiny_task_e();
  DatasetBundle data = generate_dataset(sc, tc, 20, {0.6, 0.2, 0.2}, 808);

  MetricReport bi = baseline_report(data, "test");
  for (TaskId t : {TaskId::CE, TaskId::CP, TaskId::PF}) {
    CHECK(std::isfinite(bi.of(t).nmse));
    CHECK(bi.of(t).nmse > 0);
    CHECK(bi.of(t).se <= bi.of(t).se_perfect + 1e-9);
    CHECK(bi.of(t).se_bound_ok);
  }
  CHECK(bi.of(TaskId::BF).top1 >= 0.0);
  CHECK(bi.of(TaskId::BF).top1 <= 1.0);
  CHECK(bi.of(TaskId::BF).se <= bi.of(TaskId::BF).se_perfect + 1e-9);
  CHECK(bi.of(TaskId::DE).mae >= 0.0);
  CHECK(std::isfinite(bi.of(TaskId::PE).nmse));
  CHECK(std::isfinite(bi.avg));
  CHECK(bi.checkpoint_id == "baseline");

  // the train-mean scalar baseline beats nothing on train but is well defined
  MetricReport cb = baseline_method_report(data, "test", "codebook");
  CHECK(cb.of(TaskId::BF).top1 == bi.of(TaskId::BF).top1);
  CHECK(!std::isfinite(cb.of(TaskId::CE).nmse)); // single-task row
  CHECK(!std::isfinite(cb.avg));

  MetricReport ls1 = baseline_method_report(data, "test", "ls", 10.0);
  MetricReport ls2 = baseline_method_report(data, "test", "ls", 10.0);
  CHECK(std::isfinite(ls1.of(TaskId::CE).nmse));
  CHECK(ls1.of(TaskId::CE).nmse == ls2.of(TaskId::CE).nmse); // fixed noise stream
  // noisier pilots estimate worse than clean interpolation
  CHECK(ls1.of(TaskId::CE).nmse > bi.of(TaskId::CE).nmse);
  CHECK(!std::isfinite(ls1.of(TaskId::CP).nmse));

  CHECK_THROWS_AS(baseline_method_report(data, "test", "mmse"), ConfigError);
}

TEST_CASE("model evaluation fills every task and respects the rate bound") {
  GemmPrecisionGuard guard(Precision::F64);
  ScenarioConfig sc = tiny_scenario_e();
  TaskConfig tc = tiny_task_e();
  DatasetBundle data = generate_dataset(sc, tc, 12, {0.6, 0.2, 0.2}, 31);
  Wm4Model model(tiny_model_cfg_e(), sc, tc);

  MetricReport rep = evaluate_model(model, data, "val", SeConfig{}, 4);
  for (TaskId t : {TaskId::CE, TaskId::CP, TaskId::PF}) {
    CHECK(std::isfinite(rep.of(t).nmse));
    CHECK(rep.of(t).se <= rep.of(t).se_perfect + 1e-9);
    CHECK(rep.of(t).se_bound_ok);
  }
  CHECK(rep.of(TaskId::BF).top1 >= 0.0);
  CHECK(rep.of(TaskId::BF).se <= rep.of(TaskId::BF).se_perfect + 1e-9);
  CHECK(std::isfinite(rep.of(TaskId::DE).mae));
  CHECK(std::isfinite(rep.of(TaskId::PE).nmse));
  CHECK(std::isfinite(rep.avg));
  CHECK(rep.checkpoint_id == hash_hex(model.params().content_hash()));
  CHECK(rep.dataset_hash == hash_hex(data.config_hash()));

  // batching must not change the result
  MetricReport rep2 = evaluate_model(model, data, "val", SeConfig{}, 1);
  CHECK(rep2.avg == doctest::Approx(rep.avg).epsilon(1e-12));

  nlohmann::json j = rep.to_json();
  CHECK(j.contains("tasks"));
  CHECK(j["tasks"].contains("ce"));
  CHECK(j["tasks"]["bf"].contains("top1"));
  CHECK(j["avg"].get<double>() == doctest::Approx(rep.avg).epsilon(1e-15));

  std::string table = rep.to_table();
  CHECK(table.find("task") == 0);
  CHECK(table.find("\nce ") != std::string::npos);
  CHECK(table.find("avg") != std::string::npos);

  CHECK_THROWS_AS(evaluate_model(model, data, "nope", SeConfig{}, 4), ConfigError);
}

TEST_CASE("expert-weight correlation matrix") {
  using Rec = Wm4Model::ExpertRecord;
  std::vector<Rec> recs = {
      {"blk0.fc1", TaskId::CE, {1, 0, 0, 0}},
      {"blk0.fc1", TaskId::CP, {1, 0, 0, 0}},
      {"blk0.fc1", TaskId::PF, {0, 1, 0, 0}},
      {"blk0.fc1", TaskId::BF, {0.25, 0.25, 0.25, 0.25}},
      {"blk0.fc1", TaskId::DE, {0, 1, 1, 1}},
      {"blk0.fc1", TaskId::PE, {0.5, 0.3, 0.1, 0.1}},
  };
  Tensor r = pearson_matrix(recs, "blk0.fc1");
  CHECK(r.shape() == Shape{6, 6});
  for (int i = 0; i < 6; ++i) CHECK(r[i * 6 + i] == 1.0);
  CHECK(r[0 * 6 + 1] == doctest::Approx(1.0).epsilon(1e-12));        // identical
  CHECK(r[0 * 6 + 2] == doctest::Approx(-1.0 / 3.0).epsilon(1e-12)); // disjoint one-hot
  CHECK(r[0 * 6 + 4] == doctest::Approx(-1.0).epsilon(1e-12));       // complement
  CHECK(std::isnan(r[0 * 6 + 3]));                                   // uniform: no variance
  for (int i = 0; i < 6; ++i)
    for (int j = i + 1; j < 6; ++j) {
      double a = r[i * 6 + j], b = r[j * 6 + i];
      if (std::isnan(a)) CHECK(std::isnan(b));
      else CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }

  CHECK_THROWS_AS(pearson_matrix(recs, "blk1.fc1"), DomainError);
  std::vector<Rec> partial(recs.begin(), recs.begin() + 3);
  CHECK_THROWS_AS(pearson_matrix(partial, "blk0.fc1"), DomainError);
}

TEST_CASE("ablation variants toggle the documented switches") {
  const auto& names = ablation_variants();
  REQUIRE(names.size() == 6);
  CHECK(names[0] == "full");

  ModelConfig base = tiny_model_cfg_e();
  ModelConfig v = ablation_variant(base, "full");
  CHECK(v.use_adapter_in);
  CHECK(v.use_backbone);
  v = ablation_variant(base, "no_adapter_in");
  CHECK(!v.use_adapter_in);
  CHECK(v.use_adapter_out);
  v = ablation_variant(base, "no_adapter_out");
  CHECK(!v.use_adapter_out);
  v = ablation_variant(base, "no_adapter");
  CHECK(!v.use_adapter_in);
  CHECK(!v.use_adapter_out);
  v = ablation_variant(base, "no_backbone");
  CHECK(!v.use_backbone);
  v = ablation_variant(base, "no_lora");
  CHECK(!v.use_moe);
  CHECK(v.use_backbone);
  CHECK_THROWS_AS(ablation_variant(base, "bogus"), ConfigError);
}

TEST_CASE("ablation harness trains every variant and anchors the full row") {
  GemmPrecisionGuard guard(Precision::F64);
  ScenarioConfig sc = tiny_scenario_e();
  TaskConfig tc = tiny_task_e();
  DatasetBundle data = generate_dataset(sc, tc, 12, {0.7, 0.15, 0.15}, 6);

  TrainConfig s1;
  s1.batch_size = 4;
  s1.epochs = 2;
  s1.warmup_epochs = 1;
  s1.cosine_period_epochs = 1;
  s1.val_every = 2;
  s1.seed = 5;
  TrainConfig s2 = s1;

  std::vector<std::string> log;
  std::vector<AblationRow> rows = ablate(tiny_model_cfg_e(), data, s1, s2, &log);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].variant == "full");
  CHECK(rows[0].increase_pct == doctest::Approx(0.0).epsilon(1e-12));
  for (const auto& r : rows) {
    CHECK(std::isfinite(r.avg));
    CHECK(r.increase_pct == doctest::Approx((r.avg / rows[0].avg - 1.0) * 100.0).epsilon(1e-9));
  }
  CHECK(!log.empty());
  CHECK(log[0].find("variant=full") == 0);

  std::string table = ablation_table(rows);
  CHECK(table.find("variant") == 0);
  CHECK(table.find("no_backbone") != std::string::npos);
  CHECK(table.find("%") != std::string::npos);
}

TEST_CASE("efficiency report counts match the store and the closed form") {
  ScenarioConfig sc = tiny_scenario_e();
  TaskConfig tc = tiny_task_e();
  Wm4Model model(tiny_model_cfg_e(), sc, tc);
  model.apply_stage_freeze(2);

  EfficiencyReport r = efficiency_report(model, 4, 3);
  CHECK(r.total_params == model.params().count());
  CHECK(r.trainable_params == model.params().count("moe.") + model.params().count("head."));
  CHECK(r.moe_params == r.moe_params_closed_form);
  CHECK(r.moe_params_closed_form == model.moe_param_count_closed_form());
  CHECK(r.trainable_params < r.total_params);
  CHECK(r.batch_forward_ms > 0.0);
  CHECK(r.batch_size == 4);

  nlohmann::json j = r.to_json();
  CHECK(j["moe_params"] == r.moe_params);
  CHECK(j["trainable_params"] == r.trainable_params);
}
