// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#include "wm4/model.hpp"

#include <cmath>

namespace wm4 {

using nlohmann::json;

void ModelConfig::validate() const {
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || tokens < 1)
    throw ConfigError("ModelConfig: dims must be positive");
  if (d_model % n_heads != 0) throw ConfigError("ModelConfig: d_model % n_heads != 0");
  if (res_blocks_per_stage < 0) throw ConfigError("ModelConfig: negative res_blocks_per_stage");
  if (n_experts < 1 || lora_rank < 1 || lora_alpha <= 0)
    throw ConfigError("ModelConfig: bad low-rank settings");
  if (head_map_width < 1 || d_model % head_map_width != 0)
    throw ConfigError("ModelConfig: head_map_width must divide d_model");
}

json model_to_json(const ModelConfig& c) {
  json j;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["ffn_mult"] = c.ffn_mult;
  j["tokens"] = c.tokens;
  j["res_blocks_per_stage"] = c.res_blocks_per_stage;
  j["n_experts"] = c.n_experts;
  j["lora_rank"] = c.lora_rank;
  j["lora_alpha"] = c.lora_alpha;
  j["head_map_width"] = c.head_map_width;
  j["head_hidden"] = c.head_hidden;
  j["causal"] = c.causal;
  j["use_adapter_in"] = c.use_adapter_in;
  j["use_adapter_out"] = c.use_adapter_out;
  j["use_backbone"] = c.use_backbone;
  j["use_moe"] = c.use_moe;
  j["init_seed"] = c.init_seed;
  return j;
}

ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.tokens = j.value("tokens", c.tokens);
  c.res_blocks_per_stage = j.value("res_blocks_per_stage", c.res_blocks_per_stage);
  c.n_experts = j.value("n_experts", c.n_experts);
  c.lora_rank = j.value("lora_rank", c.lora_rank);
  c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
  c.head_map_width = j.value("head_map_width", c.head_map_width);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.causal = j.value("causal", c.causal);
  c.use_adapter_in = j.value("use_adapter_in", c.use_adapter_in);
  c.use_adapter_out = j.value("use_adapter_out", c.use_adapter_out);
  c.use_backbone = j.value("use_backbone", c.use_backbone);
  c.use_moe = j.value("use_moe", c.use_moe);
  c.init_seed = j.value("init_seed", c.init_seed);
  return c;
}

Tensor lora_delta(const Tensor& a, const Tensor& b, double alpha) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[1])
    throw ShapeError("lora_delta: factor shapes disagree");
  int64_t r = a.shape()[0], din = a.shape()[1], dout = b.shape()[0];
  Tensor out({dout, din});
  gemm(false, false, dout, din, r, alpha / double(r), b.data(), a.data(), 0.0, out.data());
  return out;
}

// --- MoeLinear -----------------------------------------------------------------

Var MoeLinear::forward(const Var& x, TaskId task) const {
  Var base = linear(x, w0, b0);
  if (!injected()) return base;
  Var omega = softmax1d(select_column(gate, int64_t(task)));
  Var delta = moe_delta(x, a, bm, omega, alpha / double(rank));
  return add(base, delta);
}

std::vector<double> MoeLinear::gate_weights(TaskId task) const {
  if (!injected()) return {};
  size_t ne = a.size();
  std::vector<double> logits(ne);
  for (size_t k = 0; k < ne; ++k) logits[k] = gate->val.data()[k * size_t(kNumTasks) + size_t(task)];
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0;
  std::vector<double> w(ne);
  for (size_t k = 0; k < ne; ++k) sum += (w[k] = std::exp(logits[k] - mx));
  for (double& v : w) v /= sum;
  return w;
}

Tensor MoeLinear::merge_for_task(TaskId task) const {
  int64_t dout = w0->val.shape()[0], din = w0->val.shape()[1];
  Tensor out({dout, din});
  if (!injected()) return out;
  std::vector<double> omega = gate_weights(task);
  for (size_t k = 0; k < a.size(); ++k) {
    gemm(false, false, dout, din, rank, omega[k] * alpha / double(rank), bm[k]->val.data(),
         a[k]->val.data(), 1.0, out.data());
  }
  return out;
}

// --- Adapter ---------------------------------------------------------------------

static Var res_block_forward(const Adapter::ResBlock& rb, const Var& x) {
  // x [B, L, D]; the conv runs over the token axis with D channels.
  Var t = transpose12(x);
  t = conv1d(t, rb.c1_w, rb.c1_b);
  t = relu(t);
  t = conv1d(t, rb.c2_w, rb.c2_b);
  return add(x, transpose12(t));
}

Var Adapter::forward(const Var& x) const {
  Var h = token_linear(x, token_w);
  h = linear(h, feat_w, feat_b);
  for (const auto& rb : stage1) h = res_block_forward(rb, h);
  if (!stage1.empty() || !stage2.empty()) h = gelu(h);
  for (const auto& rb : stage2) h = res_block_forward(rb, h);
  return h;
}

// --- Head -------------------------------------------------------------------------

Var Head::forward(const Var& x, int64_t c, int64_t lf) const {
  if (conv) {
    Var m = tokens_to_map(x, c, lf);
    for (size_t i = 0; i < convs.size(); ++i) {
      m = conv2d(m, convs[i].w, convs[i].b);
      if (i + 1 < convs.size()) m = gelu(m);
    }
    Var tok = map_to_tokens(m);
    Var y = linear(tok, out_feat_w, out_feat_b);
    y = token_linear(y, out_tok_w);
    Shape full = {y->val.shape()[0]};
    full.insert(full.end(), out_dims.begin(), out_dims.end());
    return reshape(y, full);
  }
  int64_t b = x->val.shape()[0];
  Var h = reshape(x, {b, x->val.numel() / b});
  h = gelu(linear(h, fc1_w, fc1_b));
  h = gelu(linear(h, fc2_w, fc2_b));
  h = gelu(linear(h, fc3_w, fc3_b));
  return linear(h, out_w, out_b);
}

// --- model assembly ---------------------------------------------------------------

Wm4Model::Wm4Model(const ModelConfig& mc, const ScenarioConfig& sc, const TaskConfig& tc)
    : mc_(mc), sc_(sc), tc_(tc) {
  mc_.validate();
  sc_.validate();
  tc_.validate(sc_);
  build();
}

std::pair<int64_t, int64_t> Wm4Model::preprocessed_dims(TaskId t) const {
  Shape in = task_input_dims(t, sc_, tc_);
  if (task_is_reconstruction(t)) return {in[0], in[1] * in[2]};
  // angle-domain re/im plus one power entry per element
  return {in[0], in[1] * (in[2] / 2) * 3};
}

Shape Wm4Model::output_dims(TaskId t) const {
  if (t == TaskId::BF) return {tc_.codebook_beams};
  if (t == TaskId::DE || t == TaskId::PE) return {1};
  return task_label_dims(t, sc_, tc_);
}

static Tensor antenna_dft(const Tensor& raw) {
  // raw [1, K, 2*Nt] real-stacked -> angle domain, same dims.
  Shape cd = raw.shape();
  cd.back() /= 2;
  std::vector<cdouble> h = unstack_complex(raw);
  int64_t nt = cd.back();
  int64_t rows = int64_t(h.size()) / nt;
  static thread_local std::vector<cdouble> dft;
  static thread_local int64_t dft_n = -1;
  if (dft_n != nt) {
    dft.assign(size_t(nt * nt), {0, 0});
    double s = 1.0 / std::sqrt(double(nt));
    for (int64_t m = 0; m < nt; ++m)
      for (int64_t n = 0; n < nt; ++n) {
        double ph = -2.0 * kPi * double(m * n) / double(nt);
        dft[size_t(m * nt + n)] = {s * std::cos(ph), s * std::sin(ph)};
      }
    dft_n = nt;
  }
  std::vector<cdouble> out(h.size());
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t n = 0; n < nt; ++n) {
      cdouble acc{0, 0};
      for (int64_t m = 0; m < nt; ++m) acc += h[size_t(r * nt + m)] * dft[size_t(m * nt + n)];
      out[size_t(r * nt + n)] = acc;
    }
  return stack_complex(out, cd);
}

Tensor Wm4Model::preprocess_one(TaskId t, const Tensor& raw) const {
  Shape expect = task_input_dims(t, sc_, tc_);
  if (raw.shape() != expect) throw ShapeError("preprocess: unexpected input dims");
  auto [tr, fr] = preprocessed_dims(t);
  if (task_is_reconstruction(t)) return raw.reshaped({tr, fr});
  // Beam-domain re/im plus per-element powers. The scalar labels are power
  // ratios and the beam label is a power argmax; neither is reachable by a
  // linear map of re/im alone, so the adapters would have to spend trunk
  // capacity squaring.
  Tensor angle = antenna_dft(raw);
  int64_t nt = angle.shape().back() / 2;
  int64_t rows = angle.numel() / (2 * nt);
  Tensor out({rows, 3 * nt});
  for (int64_t r = 0; r < rows; ++r) {
    const double* re = angle.data() + r * 2 * nt;
    double* dst = out.data() + r * 3 * nt;
    std::copy(re, re + 2 * nt, dst);
    for (int64_t m = 0; m < nt; ++m) dst[2 * nt + m] = re[m] * re[m] + re[nt + m] * re[nt + m];
  }
  return out.reshaped({tr, fr});
}

Tensor Wm4Model::preprocess_batch(TaskId t, const std::vector<const TaskSample*>& batch) const {
  if (batch.empty()) throw DomainError("preprocess_batch: empty batch");
  auto [tr, fr] = preprocessed_dims(t);
  Tensor out({int64_t(batch.size()), tr, fr});
  int64_t per = tr * fr;
  for (size_t i = 0; i < batch.size(); ++i) {
    Tensor p = preprocess_one(t, batch[i]->input);
    std::copy(p.data(), p.data() + per, out.data() + int64_t(i) * per);
  }
  return out;
}

void Wm4Model::build() {
  Rng rng(mc_.init_seed);
  int64_t d = mc_.d_model, L = mc_.tokens, f = mc_.ffn_dim();

  // backbone first: its construction (and frozen values) must not depend on
  // which task adapters exist.
  if (mc_.use_backbone) {
    pos_ = ps_.add("backbone.pos", init_normal(rng, {L, d}, 0.02));
    blocks_.resize(size_t(mc_.n_layers));
    for (int64_t i = 0; i < mc_.n_layers; ++i) {
      std::string p = "backbone.blk" + std::to_string(i) + ".";
      TransformerBlock& b = blocks_[size_t(i)];
      b.ln1_g = ps_.add(p + "ln1.g", init_ones({d}));
      b.ln1_b = ps_.add(p + "ln1.b", init_zeros({d}));
      b.wqkv = ps_.add(p + "attn.wqkv", init_normal(rng, {3 * d, d}, 0.02));
      b.bqkv = ps_.add(p + "attn.bqkv", init_zeros({3 * d}));
      b.wo = ps_.add(p + "attn.wo", init_normal(rng, {d, d}, 0.02));
      b.bo = ps_.add(p + "attn.bo", init_zeros({d}));
      b.ln2_g = ps_.add(p + "ln2.g", init_ones({d}));
      b.ln2_b = ps_.add(p + "ln2.b", init_zeros({d}));
      b.fc1.w0 = ps_.add(p + "fc1.w", init_normal(rng, {f, d}, 0.02));
      b.fc1.b0 = ps_.add(p + "fc1.b", init_zeros({f}));
      b.fc2.w0 = ps_.add(p + "fc2.w", init_normal(rng, {d, f}, 0.02));
      b.fc2.b0 = ps_.add(p + "fc2.b", init_zeros({d}));
    }
    final_ln_g_ = ps_.add("backbone.final_ln.g", init_ones({d}));
    final_ln_b_ = ps_.add("backbone.final_ln.b", init_zeros({d}));

    if (mc_.use_moe) {
      for (int64_t i = 0; i < mc_.n_layers; ++i) {
        std::string p = "moe." + std::to_string(i) + ".";
        for (auto [which, lin] : {std::pair<const char*, MoeLinear*>{"fc1", &blocks_[size_t(i)].fc1},
                                  {"fc2", &blocks_[size_t(i)].fc2}}) {
          if (lin->injected()) throw ConfigError("moe: layer already injected");
          int64_t din = lin->w0->val.shape()[1], dout = lin->w0->val.shape()[0];
          lin->rank = mc_.lora_rank;
          lin->alpha = mc_.lora_alpha;
          for (int64_t k = 0; k < mc_.n_experts; ++k) {
            lin->a.push_back(ps_.add(p + which + ".A." + std::to_string(k),
                                     init_normal(rng, {mc_.lora_rank, din}, 0.01)));
            lin->bm.push_back(
                ps_.add(p + which + ".B." + std::to_string(k), init_zeros({dout, mc_.lora_rank})));
          }
          lin->gate = ps_.add(p + which + ".gate", init_zeros({mc_.n_experts, kNumTasks}));
        }
      }
    }
  }

  auto make_adapter = [&](const std::string& prefix, int64_t t_in, int64_t f_in, bool full) {
    Adapter ad;
    ad.token_w = ps_.add(prefix + ".token.w", init_linear(rng, t_in, L).reshaped({L, t_in}));
    ad.feat_w = ps_.add(prefix + ".feat.w", init_linear(rng, f_in, d));
    ad.feat_b = ps_.add(prefix + ".feat.b", init_zeros({d}));
    if (full) {
      int total = 2 * mc_.res_blocks_per_stage;
      for (int j = 0; j < total; ++j) {
        Adapter::ResBlock rb;
        std::string rp = prefix + ".res" + std::to_string(j) + ".";
        double std1 = std::sqrt(2.0 / double(d * 3));
        rb.c1_w = ps_.add(rp + "c1.w", init_normal(rng, {d, d, 3}, std1));
        rb.c1_b = ps_.add(rp + "c1.b", init_zeros({d}));
        rb.c2_w = ps_.add(rp + "c2.w", init_normal(rng, {d, d, 3}, std1));
        rb.c2_b = ps_.add(rp + "c2.b", init_zeros({d}));
        (j < mc_.res_blocks_per_stage ? ad.stage1 : ad.stage2).push_back(rb);
      }
    }
    return ad;
  };

  for (TaskId t : all_tasks()) {
    auto [tr, fr] = preprocessed_dims(t);
    std::string name = task_name(t);
    adapter_in_[size_t(t)] =
        make_adapter("adapter_in." + name, tr, fr, mc_.use_adapter_in);
    adapter_out_[size_t(t)] = make_adapter("adapter_out." + name, L, d, mc_.use_adapter_out);

    Head h;
    std::string hp = "head." + name + ".";
    if (task_is_reconstruction(t)) {
      h.conv = true;
      int64_t c = d / mc_.head_map_width;
      double stdc = std::sqrt(2.0 / double(c * 9));
      for (int j = 1; j <= 3; ++j) {
        Head::ConvL cl;
        cl.w = ps_.add(hp + "conv" + std::to_string(j) + ".w", init_normal(rng, {c, c, 3, 3}, stdc));
        cl.b = ps_.add(hp + "conv" + std::to_string(j) + ".b", init_zeros({c}));
        h.convs.push_back(cl);
      }
      h.out_dims = task_label_dims(t, sc_, tc_);
      int64_t t_out = h.out_dims[0];
      int64_t f_out = h.out_dims[1] * h.out_dims[2];
      h.out_feat_w = ps_.add(hp + "out_feat.w", init_linear(rng, d, f_out));
      h.out_feat_b = ps_.add(hp + "out_feat.b", init_zeros({f_out}));
      h.out_tok_w = ps_.add(hp + "out_tok.w", init_linear(rng, L, t_out).reshaped({t_out, L}));
    } else {
      int64_t hidden = mc_.dense_hidden();
      int64_t flat = L * d;
      int64_t c_out = output_dims(t)[0];
      h.fc1_w = ps_.add(hp + "fc1.w", init_linear(rng, flat, hidden));
      h.fc1_b = ps_.add(hp + "fc1.b", init_zeros({hidden}));
      h.fc2_w = ps_.add(hp + "fc2.w", init_linear(rng, hidden, hidden));
      h.fc2_b = ps_.add(hp + "fc2.b", init_zeros({hidden}));
      h.fc3_w = ps_.add(hp + "fc3.w", init_linear(rng, hidden, hidden));
      h.fc3_b = ps_.add(hp + "fc3.b", init_zeros({hidden}));
      h.out_w = ps_.add(hp + "out.w", init_linear(rng, hidden, c_out));
      h.out_b = ps_.add(hp + "out.b", init_zeros({c_out}));
    }
    heads_[size_t(t)] = h;
  }

  // nothing is trainable until a stage mask is applied
  ps_.set_all_trainable(false);
}

Var Wm4Model::adapter_in_forward(TaskId t, const Var& x) const {
  return adapter_in_[size_t(t)].forward(x);
}

Var Wm4Model::backbone_forward(TaskId t, const Var& tokens) const {
  if (!mc_.use_backbone) return tokens;
  Var h = add_broadcast_rows(tokens, pos_);
  for (const TransformerBlock& b : blocks_) {
    Var n1 = layer_norm(h, b.ln1_g, b.ln1_b);
    Var at = multihead_attention(n1, b.wqkv, b.bqkv, b.wo, b.bo, mc_.n_heads, mc_.causal);
    h = add(h, at);
    Var n2 = layer_norm(h, b.ln2_g, b.ln2_b);
    Var u = b.fc1.forward(n2, t);
    u = gelu(u);
    u = b.fc2.forward(u, t);
    h = add(h, u);
  }
  return layer_norm(h, final_ln_g_, final_ln_b_);
}

Var Wm4Model::forward_tokens(TaskId t, const Var& tokens) const {
  Var h = backbone_forward(t, tokens);
  h = adapter_out_[size_t(t)].forward(h);
  return heads_[size_t(t)].forward(h, mc_.d_model / mc_.head_map_width, mc_.head_map_width);
}

Var Wm4Model::forward(TaskId t, const Var& x) const {
  return forward_tokens(t, adapter_in_forward(t, x));
}

void Wm4Model::apply_stage_freeze(int stage, bool adapter_out_trainable_stage2) {
  ps_.set_all_trainable(false);
  if (stage == 1) {
    ps_.set_trainable("adapter_in.", true);
    ps_.set_trainable("adapter_out.", true);
    ps_.set_trainable("head.", true);
  } else if (stage == 2) {
    ps_.set_trainable("moe.", true);
    ps_.set_trainable("head.", true);
    if (adapter_out_trainable_stage2) ps_.set_trainable("adapter_out.", true);
  } else {
    throw ConfigError("apply_stage_freeze: stage must be 1 or 2");
  }
}

std::vector<std::string> Wm4Model::moe_layer_names() const {
  std::vector<std::string> names;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].fc1.injected()) names.push_back("blk" + std::to_string(i) + ".fc1");
    if (blocks_[i].fc2.injected()) names.push_back("blk" + std::to_string(i) + ".fc2");
  }
  return names;
}

const MoeLinear* Wm4Model::moe_layer(const std::string& name) const {
  for (size_t i = 0; i < blocks_.size(); ++i) {
    std::string p = "blk" + std::to_string(i) + ".";
    if (name == p + "fc1") return &blocks_[i].fc1;
    if (name == p + "fc2") return &blocks_[i].fc2;
  }
  return nullptr;
}

std::vector<Wm4Model::ExpertRecord> Wm4Model::export_expert_weights() const {
  std::vector<ExpertRecord> out;
  for (const std::string& name : moe_layer_names()) {
    const MoeLinear* lin = moe_layer(name);
    for (TaskId t : all_tasks()) out.push_back({name, t, lin->gate_weights(t)});
  }
  return out;
}

int64_t Wm4Model::moe_param_count_closed_form() const {
  if (!mc_.use_backbone || !mc_.use_moe) return 0;
  int64_t d = mc_.d_model, f = mc_.ffn_dim();
  int64_t per_block = mc_.n_experts * mc_.lora_rank * (d + f) * 2 + 2 * mc_.n_experts * kNumTasks;
  return per_block * mc_.n_layers;
}

} // namespace wm4
