// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#include "doctest.h"

#include "wm4/autodiff.hpp"

#include <cmath>
#include <functional>

using namespace wm4;

namespace {

// Central finite differences against the analytic gradients. The forward
// closure must rebuild its graph from the shared param nodes on every call.
void gradcheck(const std::vector<Var>& params, const std::function<Var()>& f,
               double rel_tol = 1e-6, double abs_tol = 1e-8) {
  GemmPrecisionGuard guard(Precision::F64);
  zero_grads(params);
  Var loss = f();
  REQUIRE(loss->val.numel() == 1);
  backward(loss);

  for (const Var& p : params) {
    REQUIRE(p->requires_grad);
    for (int64_t i = 0; i < p->val.numel(); ++i) {
      double x0 = p->val[i];
      double h = 1e-5 * std::max(1.0, std::abs(x0));
      double up, dn;
      {
        NoGradGuard ng;
        p->val[i] = x0 + h;
        up = f()->val[0];
        p->val[i] = x0 - h;
        dn = f()->val[0];
        p->val[i] = x0;
      }
      double num = (up - dn) / (2 * h);
      double ana = p->has_grad ? p->grad[i] : 0.0;
      double tol = abs_tol + rel_tol * std::max(std::abs(num), std::abs(ana));
      INFO("param " << p->name << " element " << i << " numeric " << num << " analytic " << ana);
      CHECK(std::abs(num - ana) <= tol);
    }
  }
}

Var param(Rng& rng, Shape s, const std::string& name, double stddev = 0.5) {
  return make_param(Tensor::randn(std::move(s), rng, stddev), name);
}

} // namespace

TEST_CASE("loss examples hit their closed forms") {
  GemmPrecisionGuard guard(Precision::F64);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  Var pred = make_const(t);
  CHECK(nmse_loss(pred, t)->val[0] == 0.0);

  Tensor off({2, 3}, {2, 3, 4, 5, 6, 7}); // error 6, energy 91
  CHECK(nmse_loss(make_const(off), t)->val[0] == doctest::Approx(6.0 / 91.0).epsilon(1e-12));

  Var logits = make_const(Tensor({1, 256}));
  double ce = cross_entropy_loss(logits, {17})->val[0];
  CHECK(std::abs(ce - std::log(256.0)) <= 1e-9);

  // perfect confidence drives the loss to zero
  Tensor sharp({1, 4});
  sharp[2] = 1e4;
  CHECK(cross_entropy_loss(make_const(sharp), {2})->val[0] <= 1e-9);
}

TEST_CASE("activation and structural op values") {
  GemmPrecisionGuard guard(Precision::F64);
  Tensor x({5}, {-2, -0.5, 0, 0.5, 1});
  Var g = gelu(make_const(x));
  CHECK(g->val[2] == 0.0);
  CHECK(g->val[4] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(g->val[0] == doctest::Approx(-2.0 * 0.022750131948179).epsilon(1e-9));

  Var r = relu(make_const(x));
  CHECK(r->val[0] == 0.0);
  CHECK(r->val[4] == 1.0);

  Var s = softmax1d(make_const(Tensor({4})));
  for (int i = 0; i < 4; ++i) CHECK(s->val[i] == doctest::Approx(0.25).epsilon(1e-12));

  Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
  Var col = select_column(make_const(m), 1);
  CHECK(col->val[0] == 2.0);
  CHECK(col->val[1] == 5.0);

  Tensor bpq({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  Var tr = transpose12(make_const(bpq));
  CHECK(tr->val.shape() == Shape{1, 3, 2});
  CHECK(tr->val[1] == 4.0);

  // tokens_to_map / map_to_tokens are mutual inverses
  Rng rng(9);
  Tensor tok = Tensor::randn({2, 4, 6}, rng);
  Var round = map_to_tokens(tokens_to_map(make_const(tok), 3, 2));
  CHECK(round->val.shape() == Shape{2, 4, 6});
  for (int64_t i = 0; i < tok.numel(); ++i) CHECK(round->val[i] == tok[i]);
}

TEST_CASE("no-grad forwards build no graph") {
  Rng rng(5);
  Var w = param(rng, {3, 4}, "w");
  Var x = make_const(Tensor::randn({2, 4}, rng));
  NoGradGuard ng;
  Var y = linear(x, w, nullptr);
  CHECK(y->parents.empty());
  CHECK(!y->requires_grad);
}

TEST_CASE("backward demands a scalar") {
  Rng rng(6);
  Var w = param(rng, {3}, "w");
  CHECK_THROWS_AS(backward(w), ShapeError);
}

TEST_CASE("gradcheck: elementwise and broadcast ops") {
  Rng rng(101);
  Tensor target = Tensor::randn({2, 3, 4}, rng);

  Var a = param(rng, {2, 3, 4}, "a");
  Var b = param(rng, {2, 3, 4}, "b");
  gradcheck({a, b}, [&] { return nmse_loss(add(a, b), target); });

  Var p = param(rng, {3, 4}, "p");
  gradcheck({a, p}, [&] { return nmse_loss(add_broadcast_rows(a, p), target); });

  gradcheck({a}, [&] { return nmse_loss(scale(gelu(a), 1.7), target); });
  gradcheck({a}, [&] { return nmse_loss(relu(a), target); });
  gradcheck({a}, [&] { return nmse_loss(reshape(a, {4, 6}), target.reshaped({4, 6})); });
  Tensor target_t = Tensor::randn({2, 4, 3}, rng);
  gradcheck({a}, [&] { return nmse_loss(transpose12(a), target_t); });
}

TEST_CASE("gradcheck: softmax and column selection") {
  Rng rng(102);
  Var g = param(rng, {4, 3}, "gate");
  Tensor target({4}, {0.1, 0.2, 0.3, 0.4});
  gradcheck({g}, [&] { return nmse_loss(softmax1d(select_column(g, 1)), target); });
}

TEST_CASE("gradcheck: linear, token_linear and layer_norm") {
  Rng rng(103);
  Var x = param(rng, {2, 3, 4}, "x");
  Var w = param(rng, {5, 4}, "w");
  Var b = param(rng, {5}, "b");
  Tensor t1 = Tensor::randn({2, 3, 5}, rng);
  gradcheck({x, w, b}, [&] { return nmse_loss(linear(x, w, b), t1); });

  Var p = param(rng, {6, 3}, "p");
  Tensor t2 = Tensor::randn({2, 6, 4}, rng);
  gradcheck({x, p}, [&] { return nmse_loss(token_linear(x, p), t2); });

  Var g = param(rng, {4}, "g");
  Var beta = param(rng, {4}, "beta");
  Tensor t3 = Tensor::randn({2, 3, 4}, rng);
  gradcheck({x, g, beta}, [&] { return nmse_loss(layer_norm(x, g, beta), t3); }, 1e-5, 1e-7);
}

TEST_CASE("gradcheck: convolutions") {
  Rng rng(104);
  Var x = param(rng, {2, 3, 5}, "x");
  Var w = param(rng, {4, 3, 3}, "w");
  Var b = param(rng, {4}, "b");
  Tensor t1 = Tensor::randn({2, 4, 5}, rng);
  gradcheck({x, w, b}, [&] { return nmse_loss(conv1d(x, w, b), t1); });

  Var xi = param(rng, {2, 2, 3, 4}, "xi");
  Var wi = param(rng, {3, 2, 3, 3}, "wi");
  Var bi = param(rng, {3}, "bi");
  Tensor t2 = Tensor::randn({2, 3, 3, 4}, rng);
  gradcheck({xi, wi, bi}, [&] { return nmse_loss(conv2d(xi, wi, bi), t2); });

  // map round trip inside a graph
  Var tok = param(rng, {2, 4, 6}, "tok");
  Tensor t3 = Tensor::randn({2, 4, 6}, rng);
  gradcheck({tok}, [&] { return nmse_loss(map_to_tokens(tokens_to_map(tok, 2, 3)), t3); });
}

TEST_CASE("gradcheck: multi-head attention, bidirectional and causal") {
  Rng rng(105);
  Var x = param(rng, {2, 3, 8}, "x");
  Var wqkv = param(rng, {24, 8}, "wqkv", 0.3);
  Var bqkv = param(rng, {24}, "bqkv", 0.1);
  Var wo = param(rng, {8, 8}, "wo", 0.3);
  Var bo = param(rng, {8}, "bo", 0.1);
  Tensor t = Tensor::randn({2, 3, 8}, rng);
  gradcheck({x, wqkv, bqkv, wo, bo},
            [&] { return nmse_loss(multihead_attention(x, wqkv, bqkv, wo, bo, 2, false), t); },
            1e-4, 1e-6);
  gradcheck({x, wqkv, wo},
            [&] { return nmse_loss(multihead_attention(x, wqkv, bqkv, wo, bo, 2, true), t); },
            1e-4, 1e-6);
}

TEST_CASE("gradcheck: mixture-of-experts low-rank delta") {
  Rng rng(106);
  Var x = param(rng, {2, 3, 4}, "x");
  std::vector<Var> a = {param(rng, {2, 4}, "a0"), param(rng, {2, 4}, "a1")};
  std::vector<Var> bm = {param(rng, {5, 2}, "b0"), param(rng, {5, 2}, "b1")};
  Var gate = param(rng, {2}, "gate");
  Tensor t = Tensor::randn({2, 3, 5}, rng);
  std::vector<Var> all = {x, a[0], a[1], bm[0], bm[1], gate};
  gradcheck(all, [&] { return nmse_loss(moe_delta(x, a, bm, softmax1d(gate), 2.0), t); });
}

TEST_CASE("gradcheck: cross entropy and weighted sums") {
  Rng rng(107);
  Var logits = param(rng, {3, 5}, "logits");
  gradcheck({logits}, [&] { return cross_entropy_loss(logits, {0, 4, 2}); });

  Var x = param(rng, {2, 3}, "x");
  Tensor t = Tensor::randn({2, 3}, rng);
  gradcheck({x, logits}, [&] {
    Var l1 = nmse_loss(x, t);
    Var l2 = cross_entropy_loss(logits, {1, 1, 3});
    return weighted_sum({l1, l2}, {0.7, 1.3});
  });
}

TEST_CASE("gradients skip frozen parents entirely") {
  Rng rng(108);
  Var w = param(rng, {3, 4}, "w");
  w->requires_grad = false;
  Var x = param(rng, {2, 4}, "x");
  Var loss = nmse_loss(linear(x, w, nullptr), Tensor::randn({2, 3}, rng));
  backward(loss);
  CHECK(!w->has_grad);
  CHECK(x->has_grad);
}
