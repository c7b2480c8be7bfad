// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "wm4/tensor.hpp"

namespace wm4 {

// Define-by-run reverse-mode autodiff over dense double tensors. Each op
// returns a new node whose closure knows how to push gradients to its
// parents. Nodes hold their parents alive; backward() runs a topological
// sweep from a scalar loss.
//
// Gradients for a given parent are only computed when that parent's
// requires_grad is set, so frozen parameters cost no backward GEMMs.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor val;
  Tensor grad;      // allocated on first accumulation
  bool has_grad = false;
  bool requires_grad = false;
  std::string name; // parameters only; empty for intermediates
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buf(); // zero-initialized on first use
  void add_grad(const Tensor& g);
};

/// Leaf with gradient tracking (model parameter).
Var make_param(Tensor t, std::string name);
/// Leaf without gradient tracking (inputs, constants).
Var make_const(Tensor t);

bool grad_enabled();

/// Disables graph construction in a scope; forwards become value-only.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();

 private:
  bool prev_;
};

/// Reverse sweep from a scalar node. Accumulates into each leaf's grad.
void backward(const Var& loss);

/// Zeroes gradient buffers on the given params.
void zero_grads(const std::vector<Var>& params);

// --- elementwise and structural ops ---------------------------------------

Var add(const Var& a, const Var& b);                 // same shape
Var add_broadcast_rows(const Var& x, const Var& p);  // [B, L, D] + [L, D]
Var scale(const Var& x, double s);
Var gelu(const Var& x); // exact erf form
Var relu(const Var& x);
Var reshape(const Var& x, Shape s);
Var transpose12(const Var& x);                   // [B, P, Q] -> [B, Q, P]
Var tokens_to_map(const Var& x, int64_t c, int64_t lf); // [B,L,D] -> [B,C,L,Lf]
Var map_to_tokens(const Var& x);                        // [B,C,L,Lf] -> [B,L,C*Lf]
Var select_column(const Var& m, int64_t j);      // [R, C] -> [R]
Var softmax1d(const Var& x);                     // [N] -> simplex

// --- linear algebra ---------------------------------------------------------

/// x [..., d_in] * W^T + b, W [d_out, d_in], b [d_out] or null.
Var linear(const Var& x, const Var& w, const Var& b);
/// Token-axis map: x [B, L_in, F], p [L_out, L_in] -> [B, L_out, F].
Var token_linear(const Var& x, const Var& p);
/// 1-D conv, stride 1, zero padding to keep length. x [B, C_in, L],
/// w [C_out, C_in, k] (k odd), b [C_out] or null.
Var conv1d(const Var& x, const Var& w, const Var& b);
/// 2-D conv, stride 1, zero padding 1. x [B, C_in, H, W], w [C_out, C_in, 3, 3].
Var conv2d(const Var& x, const Var& w, const Var& b);
/// LayerNorm over the last dim with affine params g, b [D].
Var layer_norm(const Var& x, const Var& g, const Var& b, double eps = 1e-5);
/// Fused multi-head self-attention. x [B, L, D]; wqkv [3D, D]; wo [D, D].
Var multihead_attention(const Var& x, const Var& wqkv, const Var& bqkv, const Var& wo,
                        const Var& bo, int64_t n_heads, bool causal);
/// Mixture-of-experts low-rank delta: sum_k omega_k * (x A_k^T) B_k^T * scale.
/// x [B?, L, d_in] (leading dims folded), a[k] [r, d_in], b[k] [d_out, r],
/// omega [N_e]. Returns x-shaped output with last dim d_out.
Var moe_delta(const Var& x, const std::vector<Var>& a, const std::vector<Var>& b,
              const Var& omega, double scale);

// --- losses ------------------------------------------------------------------

/// Aggregate NMSE: sum((pred-target)^2) / max(sum(target^2), eps). Scalar node.
Var nmse_loss(const Var& pred, const Tensor& target, double eps = 1e-12);
/// Mean cross-entropy over rows of logits [B, C] with integer labels.
Var cross_entropy_loss(const Var& logits, const std::vector<int64_t>& labels);
/// sum_i coeff_i * scalars_i as a scalar node.
Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& coeffs);

} // namespace wm4
