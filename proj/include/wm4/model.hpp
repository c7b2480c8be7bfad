// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "wm4/nn.hpp"
#include "wm4/tasks.hpp"

namespace wm4 {

// Architecture knobs. Defaults are the desk profile; paper-scale values in
// comments. The use_* switches exist for the ablation harness: a disabled
// adapter degrades to its bare two-axis linear projection, use_backbone=false
// bypasses the transformer entirely, use_moe=false leaves the FFN linears
// unwrapped.
struct ModelConfig {
  int64_t d_model = 128; // token feature width (768 at paper scale)
  int64_t n_layers = 2;  // transformer blocks (6 at paper scale)
  int64_t n_heads = 4;
  int64_t ffn_mult = 4;
  int64_t tokens = 16;          // token count L shared by every task
  int res_blocks_per_stage = 1; // residual conv blocks per adapter stage (4 at paper scale)
  int64_t n_experts = 8;
  int64_t lora_rank = 8;
  double lora_alpha = 16.0; // 2 * rank
  int64_t head_map_width = 8; // conv heads reshape tokens to [d_model/this, tokens, this]
  int64_t head_hidden = 0;    // dense head width; 0 means d_model
  bool causal = false;
  bool use_adapter_in = true;
  bool use_adapter_out = true;
  bool use_backbone = true;
  bool use_moe = true;
  uint64_t init_seed = 7;

  int64_t ffn_dim() const { return ffn_mult * d_model; }
  int64_t dense_hidden() const { return head_hidden > 0 ? head_hidden : d_model; }
  void validate() const;
};

nlohmann::json model_to_json(const ModelConfig& c);
ModelConfig model_from_json(const nlohmann::json& j);

/// Dense low-rank update (alpha/r) * B * A. a [r, d_in], b [d_out, r].
Tensor lora_delta(const Tensor& a, const Tensor& b, double alpha);

// One linear layer with a frozen base and an injected bank of low-rank
// experts mixed by a task-conditioned gate.
struct MoeLinear {
  Var w0, b0;             // frozen [d_out, d_in], [d_out]
  std::vector<Var> a, bm; // n_experts factors, a [r, d_in], bm [d_out, r]
  Var gate;               // [n_experts, n_tasks]
  int64_t rank = 0;
  double alpha = 0.0;

  bool injected() const { return !a.empty(); }
  Var forward(const Var& x, TaskId task) const;
  /// Mixing weights for a task, plain math (no graph).
  std::vector<double> gate_weights(TaskId task) const;
  /// Dense merged update for a task; zero tensor when not injected.
  Tensor merge_for_task(TaskId task) const;
};

struct TransformerBlock {
  Var ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b;
  MoeLinear fc1, fc2;
};

// Per-task adapter: two-axis linear projection to [tokens, d_model], then two
// stages of residual 1-D conv blocks with a GELU between the stages. With
// full_structure=false only the projection remains (ablation form).
struct Adapter {
  Var token_w;            // [tokens_out, tokens_in]
  Var feat_w, feat_b;     // [d_out, d_in], [d_out]
  struct ResBlock {
    Var c1_w, c1_b, c2_w, c2_b; // conv kernels [D, D, 3]
  };
  std::vector<ResBlock> stage1, stage2;

  Var forward(const Var& x) const;
};

struct Head {
  bool conv = false;
  // conv kind
  struct ConvL {
    Var w, b; // [C, C, 3, 3]
  };
  std::vector<ConvL> convs;
  Var out_feat_w, out_feat_b; // feature alignment [F_out, D]
  Var out_tok_w;              // token alignment [T_out, L]
  Shape out_dims;             // per-sample output dims
  // dense kind
  Var fc1_w, fc1_b, fc2_w, fc2_b, fc3_w, fc3_b, out_w, out_b;

  Var forward(const Var& x, int64_t c, int64_t lf) const;
};

// The assembled multi-task model: per-task input adapter -> shared frozen
// transformer with task-gated low-rank FFN updates -> per-task output adapter
// -> per-task head. One parameter store owns everything; construction order
// (and therefore checkpoints and reproducibility) is fixed.
class Wm4Model {
 public:
  Wm4Model(const ModelConfig& mc, const ScenarioConfig& sc, const TaskConfig& tc);

  const ModelConfig& config() const { return mc_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  /// Raw task input [per-sample dims] -> preprocessed matrix [tokens_raw, feat_raw].
  /// CE/CP/PF flatten per timestamp; BF/DE/PE go to the angle domain through a
  /// unitary antenna DFT first.
  Tensor preprocess_one(TaskId t, const Tensor& raw) const;
  Tensor preprocess_batch(TaskId t, const std::vector<const TaskSample*>& batch) const;
  std::pair<int64_t, int64_t> preprocessed_dims(TaskId t) const;
  Shape output_dims(TaskId t) const; // per sample

  /// Full forward: x [B, tokens_raw, feat_raw] -> task output.
  Var forward(TaskId t, const Var& x) const;
  /// Adapter-in section only; its output feeds forward_tokens. Split out so
  /// stage-2 training can cache it (the adapter is frozen there).
  Var adapter_in_forward(TaskId t, const Var& x) const;
  /// Backbone + output adapter + head from cached tokens [B, L, D].
  Var forward_tokens(TaskId t, const Var& tokens) const;

  /// Stage 1: adapters + heads trainable. Stage 2: experts/gates + heads
  /// trainable, adapters frozen (flag re-enables output adapters). The
  /// backbone base is frozen in both.
  void apply_stage_freeze(int stage, bool adapter_out_trainable_stage2 = false);

  struct ExpertRecord {
    std::string layer; // e.g. "blk0.fc1"
    TaskId task;
    std::vector<double> omega;
  };
  std::vector<ExpertRecord> export_expert_weights() const;
  std::vector<std::string> moe_layer_names() const;
  const MoeLinear* moe_layer(const std::string& name) const;

  /// Closed-form trainable count of the injected bank:
  /// per wrapped linear n_experts*r*(d_in+d_out) + n_experts*n_tasks.
  int64_t moe_param_count_closed_form() const;

 private:
  void build();
  Var backbone_forward(TaskId t, const Var& tokens) const;

  ModelConfig mc_;
  ScenarioConfig sc_;
  TaskConfig tc_;
  ParamStore ps_;
  Var pos_;
  std::vector<TransformerBlock> blocks_;
  Var final_ln_g_, final_ln_b_;
  std::array<Adapter, kNumTasks> adapter_in_;
  std::array<Adapter, kNumTasks> adapter_out_;
  std::array<Head, kNumTasks> heads_;
};

} // namespace wm4
