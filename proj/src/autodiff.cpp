// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#include "wm4/autodiff.hpp"

#include <cmath>
#include <unordered_set>

namespace wm4 {

namespace {

bool g_grad_enabled = true;

int64_t fold_rows(const Shape& s) {
  int64_t m = 1;
  for (size_t i = 0; i + 1 < s.size(); ++i) m *= s[i];
  return m;
}

bool any_requires(const std::vector<Var>& parents) {
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

// The graph is pruned eagerly: a node with no differentiable ancestor keeps
// neither parents nor a closure, so inference holds no activation chain.
Var make_node(Tensor val, std::vector<Var> parents, std::function<void(Node&)> bwd) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  if (g_grad_enabled && any_requires(parents)) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(bwd);
  }
  return n;
}

void add_col_sums(const Tensor& src, int64_t rows, int64_t cols, Tensor& dst) {
  for (int64_t i = 0; i < rows; ++i) {
    const double* r = src.data() + i * cols;
    double* d = dst.data();
    for (int64_t j = 0; j < cols; ++j) d[j] += r[j];
  }
}

} // namespace

Tensor& Node::grad_buf() {
  if (!has_grad) {
    if (grad.numel() != val.numel())
      grad = Tensor(val.shape());
    else
      grad.fill(0.0);
    has_grad = true;
  }
  return grad;
}

void Node::add_grad(const Tensor& g) {
  if (g.numel() != val.numel()) throw ShapeError("Node::add_grad: shape mismatch");
  Tensor& buf = grad_buf();
  const double* s = g.data();
  double* d = buf.data();
  for (int64_t i = 0; i < g.numel(); ++i) d[i] += s[i];
}

Var make_param(Tensor t, std::string name) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->requires_grad = true;
  n->name = std::move(name);
  return n;
}

Var make_const(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  return n;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Var& loss) {
  if (!loss) throw DomainError("backward: null node");
  if (loss->val.numel() != 1) throw ShapeError("backward: loss must be scalar");
  if (!loss->requires_grad) return; // nothing trainable upstream

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({loss.get(), 0});
  while (!stack.empty()) {
    auto& fr = stack.back();
    Node* n = fr.first;
    if (fr.second == 0 && visited.count(n)) {
      stack.pop_back();
      continue;
    }
    if (fr.second < n->parents.size()) {
      Node* p = n->parents[fr.second++].get();
      if (p->requires_grad && !visited.count(p)) stack.push_back({p, 0});
    } else {
      if (!visited.count(n)) {
        visited.insert(n);
        order.push_back(n);
      }
      stack.pop_back();
    }
  }

  loss->grad_buf().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad) n->backward_fn(*n);
  }
}

void zero_grads(const std::vector<Var>& params) {
  for (const auto& p : params) {
    if (p->has_grad) {
      p->grad.fill(0.0);
      p->has_grad = false;
    }
  }
}

// --- elementwise and structural ops ----------------------------------------

Var add(const Var& a, const Var& b) {
  if (!a->val.same_shape(b->val)) throw ShapeError("add: shape mismatch");
  Tensor out = a->val;
  {
    double* d = out.data();
    const double* s = b->val.data();
    for (int64_t i = 0; i < out.numel(); ++i) d[i] += s[i];
  }
  Var pa = a, pb = b;
  return make_node(std::move(out), {a, b}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->add_grad(self.grad);
    if (pb->requires_grad) pb->add_grad(self.grad);
  });
}

Var add_broadcast_rows(const Var& x, const Var& p) {
  const int64_t rl = p->val.numel();
  if (rl == 0 || x->val.numel() % rl != 0)
    throw ShapeError("add_broadcast_rows: row length mismatch");
  const int64_t rows = x->val.numel() / rl;
  Tensor out = x->val;
  for (int64_t i = 0; i < rows; ++i) {
    double* d = out.data() + i * rl;
    const double* s = p->val.data();
    for (int64_t j = 0; j < rl; ++j) d[j] += s[j];
  }
  Var px = x, pp = p;
  return make_node(std::move(out), {x, p}, [px, pp, rows, rl](Node& self) {
    if (px->requires_grad) px->add_grad(self.grad);
    if (pp->requires_grad) add_col_sums(self.grad, rows, rl, pp->grad_buf());
  });
}

Var scale(const Var& x, double s) {
  Tensor out = x->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  Var px = x;
  return make_node(std::move(out), {x}, [px, s](Node& self) {
    if (!px->requires_grad) return;
    Tensor& dst = px->grad_buf();
    for (int64_t i = 0; i < self.grad.numel(); ++i) dst[i] += s * self.grad[i];
  });
}

Var gelu(const Var& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  Tensor out = x->val;
  for (int64_t i = 0; i < out.numel(); ++i) {
    double v = out[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  Var px = x;
  return make_node(std::move(out), {x}, [px](Node& self) {
    if (!px->requires_grad) return;
    Tensor& dst = px->grad_buf();
    const double* xv = px->val.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) {
      double v = xv[i];
      double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      dst[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x->val;
  for (int64_t i = 0; i < out.numel(); ++i)
    if (out[i] < 0) out[i] = 0;
  Var px = x;
  return make_node(std::move(out), {x}, [px](Node& self) {
    if (!px->requires_grad) return;
    Tensor& dst = px->grad_buf();
    const double* xv = px->val.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      if (xv[i] > 0) dst[i] += self.grad[i];
  });
}

Var reshape(const Var& x, Shape s) {
  Tensor out = x->val.reshaped(std::move(s));
  Var px = x;
  return make_node(std::move(out), {x}, [px](Node& self) {
    if (!px->requires_grad) return;
    px->add_grad(self.grad.reshaped(px->val.shape()));
  });
}

Var transpose12(const Var& x) {
  if (x->val.rank() != 3) throw ShapeError("transpose12: expects rank 3");
  const int64_t b = x->val.dim(0), p = x->val.dim(1), q = x->val.dim(2);
  Tensor out({b, q, p});
  const double* s = x->val.data();
  double* d = out.data();
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < p; ++j)
      for (int64_t k = 0; k < q; ++k) d[(i * q + k) * p + j] = s[(i * p + j) * q + k];
  Var px = x;
  return make_node(std::move(out), {x}, [px, b, p, q](Node& self) {
    if (!px->requires_grad) return;
    Tensor& dst = px->grad_buf();
    const double* g = self.grad.data();
    for (int64_t i = 0; i < b; ++i)
      for (int64_t k = 0; k < q; ++k)
        for (int64_t j = 0; j < p; ++j) dst.data()[(i * p + j) * q + k] += g[(i * q + k) * p + j];
  });
}

Var tokens_to_map(const Var& x, int64_t c, int64_t lf) {
  if (x->val.rank() != 3) throw ShapeError("tokens_to_map: expects [B, L, D]");
  const int64_t b = x->val.dim(0), l = x->val.dim(1), d = x->val.dim(2);
  if (c * lf != d) throw ShapeError("tokens_to_map: C*Lf must equal D");
  Tensor out({b, c, l, lf});
  const double* s = x->val.data();
  double* o = out.data();
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < l; ++j)
      for (int64_t k = 0; k < c; ++k)
        for (int64_t f = 0; f < lf; ++f)
          o[((i * c + k) * l + j) * lf + f] = s[(i * l + j) * d + k * lf + f];
  Var px = x;
  return make_node(std::move(out), {x}, [px, b, l, d, c, lf](Node& self) {
    if (!px->requires_grad) return;
    Tensor& dst = px->grad_buf();
    const double* g = self.grad.data();
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < l; ++j)
        for (int64_t k = 0; k < c; ++k)
          for (int64_t f = 0; f < lf; ++f)
            dst.data()[(i * l + j) * d + k * lf + f] += g[((i * c + k) * l + j) * lf + f];
  });
}

Var map_to_tokens(const Var& x) {
  if (x->val.rank() != 4) throw ShapeError("map_to_tokens: expects [B, C, L, Lf]");
  const int64_t b = x->val.dim(0), c = x->val.dim(1), l = x->val.dim(2), lf = x->val.dim(3);
  const int64_t d = c * lf;
  Tensor out({b, l, d});
  const double* s = x->val.data();
  double* o = out.data();
  for (int64_t i = 0; i < b; ++i)
    for (int64_t k = 0; k < c; ++k)
      for (int64_t j = 0; j < l; ++j)
        for (int64_t f = 0; f < lf; ++f)
          o[(i * l + j) * d + k * lf + f] = s[((i * c + k) * l + j) * lf + f];
  Var px = x;
  return make_node(std::move(out), {x}, [px, b, c, l, lf, d](Node& self) {
    if (!px->requires_grad) return;
    Tensor& dst = px->grad_buf();
    const double* g = self.grad.data();
    for (int64_t i = 0; i < b; ++i)
      for (int64_t k = 0; k < c; ++k)
        for (int64_t j = 0; j < l; ++j)
          for (int64_t f = 0; f < lf; ++f)
            dst.data()[((i * c + k) * l + j) * lf + f] += g[(i * l + j) * d + k * lf + f];
  });
}

Var select_column(const Var& m, int64_t j) {
  if (m->val.rank() != 2) throw ShapeError("select_column: expects rank 2");
  const int64_t r = m->val.dim(0), c = m->val.dim(1);
  if (j < 0 || j >= c) throw ShapeError("select_column: index out of range");
  Tensor out({r});
  for (int64_t i = 0; i < r; ++i) out[i] = m->val[i * c + j];
  Var pm = m;
  return make_node(std::move(out), {m}, [pm, r, c, j](Node& self) {
    if (!pm->requires_grad) return;
    Tensor& dst = pm->grad_buf();
    for (int64_t i = 0; i < r; ++i) dst.data()[i * c + j] += self.grad[i];
  });
}

Var softmax1d(const Var& x) {
  if (x->val.rank() != 1) throw ShapeError("softmax1d: expects rank 1");
  const int64_t n = x->val.numel();
  Tensor out = x->val;
  double mx = out[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, out[i]);
  double sum = 0;
  for (int64_t i = 0; i < n; ++i) {
    out[i] = std::exp(out[i] - mx);
    sum += out[i];
  }
  for (int64_t i = 0; i < n; ++i) out[i] /= sum;
  Var px = x;
  return make_node(std::move(out), {x}, [px, n](Node& self) {
    if (!px->requires_grad) return;
    const double* p = self.val.data();
    const double* g = self.grad.data();
    double dot = 0;
    for (int64_t i = 0; i < n; ++i) dot += p[i] * g[i];
    Tensor& dst = px->grad_buf();
    for (int64_t i = 0; i < n; ++i) dst.data()[i] += p[i] * (g[i] - dot);
  });
}

// --- linear algebra ----------------------------------------------------------

Var linear(const Var& x, const Var& w, const Var& b) {
  if (w->val.rank() != 2) throw ShapeError("linear: weight must be rank 2");
  const int64_t d_out = w->val.dim(0), d_in = w->val.dim(1);
  if (x->val.rank() < 1 || x->val.dim(x->val.rank() - 1) != d_in)
    throw ShapeError("linear: input feature dim mismatch");
  if (b && b->val.numel() != 0 && b->val.numel() != d_out)
    throw ShapeError("linear: bias size mismatch");
  const int64_t m = fold_rows(x->val.shape());

  Shape out_shape = x->val.shape();
  out_shape.back() = d_out;
  Tensor out(out_shape);
  gemm(false, true, m, d_out, d_in, 1.0, x->val.data(), w->val.data(), 0.0, out.data());
  const bool has_bias = b && b->val.numel() == d_out;
  if (has_bias) {
    for (int64_t i = 0; i < m; ++i) {
      double* row = out.data() + i * d_out;
      const double* bb = b->val.data();
      for (int64_t j = 0; j < d_out; ++j) row[j] += bb[j];
    }
  }

  std::vector<Var> parents = {x, w};
  if (has_bias) parents.push_back(b);
  Var px = x, pw = w, pb = has_bias ? b : Var();
  return make_node(std::move(out), std::move(parents), [px, pw, pb, m, d_in, d_out](Node& self) {
    const double* g = self.grad.data();
    if (px->requires_grad)
      gemm(false, false, m, d_in, d_out, 1.0, g, pw->val.data(), 1.0, px->grad_buf().data());
    if (pw->requires_grad)
      gemm(true, false, d_out, d_in, m, 1.0, g, px->val.data(), 1.0, pw->grad_buf().data());
    if (pb && pb->requires_grad) add_col_sums(self.grad, m, d_out, pb->grad_buf());
  });
}

Var token_linear(const Var& x, const Var& p) {
  if (x->val.rank() != 3 || p->val.rank() != 2) throw ShapeError("token_linear: rank mismatch");
  const int64_t b = x->val.dim(0), l_in = x->val.dim(1), f = x->val.dim(2);
  const int64_t l_out = p->val.dim(0);
  if (p->val.dim(1) != l_in) throw ShapeError("token_linear: token dim mismatch");

  Tensor out({b, l_out, f});
  for (int64_t i = 0; i < b; ++i)
    gemm(false, false, l_out, f, l_in, 1.0, p->val.data(), x->val.data() + i * l_in * f, 0.0,
         out.data() + i * l_out * f);

  Var px = x, pp = p;
  return make_node(std::move(out), {x, p}, [px, pp, b, l_in, l_out, f](Node& self) {
    const double* g = self.grad.data();
    if (px->requires_grad) {
      Tensor& dst = px->grad_buf();
      for (int64_t i = 0; i < b; ++i)
        gemm(true, false, l_in, f, l_out, 1.0, pp->val.data(), g + i * l_out * f, 1.0,
             dst.data() + i * l_in * f);
    }
    if (pp->requires_grad) {
      Tensor& dst = pp->grad_buf();
      for (int64_t i = 0; i < b; ++i)
        gemm(false, true, l_out, l_in, f, 1.0, g + i * l_out * f, px->val.data() + i * l_in * f,
             1.0, dst.data());
    }
  });
}

namespace {

// im2col for 1-D convolution, zero padding, stride 1.
void im2col1d(const double* x, int64_t c_in, int64_t len, int64_t k, double* col) {
  const int64_t pad = k / 2;
  for (int64_t c = 0; c < c_in; ++c)
    for (int64_t t = 0; t < k; ++t) {
      double* row = col + (c * k + t) * len;
      const double* src = x + c * len;
      for (int64_t l = 0; l < len; ++l) {
        int64_t idx = l + t - pad;
        row[l] = (idx >= 0 && idx < len) ? src[idx] : 0.0;
      }
    }
}

void col2im1d(const double* col, int64_t c_in, int64_t len, int64_t k, double* dx) {
  const int64_t pad = k / 2;
  for (int64_t c = 0; c < c_in; ++c)
    for (int64_t t = 0; t < k; ++t) {
      const double* row = col + (c * k + t) * len;
      double* dst = dx + c * len;
      for (int64_t l = 0; l < len; ++l) {
        int64_t idx = l + t - pad;
        if (idx >= 0 && idx < len) dst[idx] += row[l];
      }
    }
}

void im2col2d(const double* x, int64_t c_in, int64_t h, int64_t w, double* col) {
  // 3x3 kernel, padding 1
  for (int64_t c = 0; c < c_in; ++c)
    for (int64_t ky = 0; ky < 3; ++ky)
      for (int64_t kx = 0; kx < 3; ++kx) {
        double* row = col + ((c * 3 + ky) * 3 + kx) * (h * w);
        const double* src = x + c * h * w;
        for (int64_t y = 0; y < h; ++y) {
          int64_t sy = y + ky - 1;
          for (int64_t xx = 0; xx < w; ++xx) {
            int64_t sx = xx + kx - 1;
            row[y * w + xx] =
                (sy >= 0 && sy < h && sx >= 0 && sx < w) ? src[sy * w + sx] : 0.0;
          }
        }
      }
}

void col2im2d(const double* col, int64_t c_in, int64_t h, int64_t w, double* dx) {
  for (int64_t c = 0; c < c_in; ++c)
    for (int64_t ky = 0; ky < 3; ++ky)
      for (int64_t kx = 0; kx < 3; ++kx) {
        const double* row = col + ((c * 3 + ky) * 3 + kx) * (h * w);
        double* dst = dx + c * h * w;
        for (int64_t y = 0; y < h; ++y) {
          int64_t sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int64_t xx = 0; xx < w; ++xx) {
            int64_t sx = xx + kx - 1;
            if (sx >= 0 && sx < w) dst[sy * w + sx] += row[y * w + xx];
          }
        }
      }
}

} // namespace

Var conv1d(const Var& x, const Var& w, const Var& b) {
  if (x->val.rank() != 3 || w->val.rank() != 3) throw ShapeError("conv1d: rank mismatch");
  const int64_t bs = x->val.dim(0), c_in = x->val.dim(1), len = x->val.dim(2);
  const int64_t c_out = w->val.dim(0), k = w->val.dim(2);
  if (w->val.dim(1) != c_in) throw ShapeError("conv1d: channel mismatch");
  if (k % 2 == 0) throw ShapeError("conv1d: kernel must be odd");
  const bool has_bias = b && b->val.numel() == c_out;

  auto cols = std::make_shared<Tensor>(Shape{bs, c_in * k, len});
  Tensor out({bs, c_out, len});
  for (int64_t i = 0; i < bs; ++i) {
    double* col = cols->data() + i * c_in * k * len;
    im2col1d(x->val.data() + i * c_in * len, c_in, len, k, col);
    gemm(false, false, c_out, len, c_in * k, 1.0, w->val.data(), col, 0.0,
         out.data() + i * c_out * len);
    if (has_bias)
      for (int64_t c = 0; c < c_out; ++c) {
        double* row = out.data() + (i * c_out + c) * len;
        for (int64_t l = 0; l < len; ++l) row[l] += b->val[c];
      }
  }

  std::vector<Var> parents = {x, w};
  if (has_bias) parents.push_back(b);
  Var px = x, pw = w, pb = has_bias ? b : Var();
  return make_node(std::move(out), std::move(parents),
                   [px, pw, pb, cols, bs, c_in, c_out, len, k](Node& self) {
                     const double* g = self.grad.data();
                     Tensor dcol({c_in * k, len});
                     for (int64_t i = 0; i < bs; ++i) {
                       const double* gi = g + i * c_out * len;
                       const double* col = cols->data() + i * c_in * k * len;
                       if (pw->requires_grad)
                         gemm(false, true, c_out, c_in * k, len, 1.0, gi, col, 1.0,
                              pw->grad_buf().data());
                       if (px->requires_grad) {
                         gemm(true, false, c_in * k, len, c_out, 1.0, pw->val.data(), gi, 0.0,
                              dcol.data());
                         col2im1d(dcol.data(), c_in, len, k,
                                  px->grad_buf().data() + i * c_in * len);
                       }
                       if (pb && pb->requires_grad) {
                         Tensor& db = pb->grad_buf();
                         for (int64_t c = 0; c < c_out; ++c) {
                           double s = 0;
                           for (int64_t l = 0; l < len; ++l) s += gi[c * len + l];
                           db.data()[c] += s;
                         }
                       }
                     }
                   });
}

Var conv2d(const Var& x, const Var& w, const Var& b) {
  if (x->val.rank() != 4 || w->val.rank() != 4) throw ShapeError("conv2d: rank mismatch");
  const int64_t bs = x->val.dim(0), c_in = x->val.dim(1), h = x->val.dim(2), wd = x->val.dim(3);
  const int64_t c_out = w->val.dim(0);
  if (w->val.dim(1) != c_in || w->val.dim(2) != 3 || w->val.dim(3) != 3)
    throw ShapeError("conv2d: expects [C_out, C_in, 3, 3] kernel");
  const int64_t hw = h * wd;
  const bool has_bias = b && b->val.numel() == c_out;

  auto cols = std::make_shared<Tensor>(Shape{bs, c_in * 9, hw});
  Tensor out({bs, c_out, h, wd});
  for (int64_t i = 0; i < bs; ++i) {
    double* col = cols->data() + i * c_in * 9 * hw;
    im2col2d(x->val.data() + i * c_in * hw, c_in, h, wd, col);
    gemm(false, false, c_out, hw, c_in * 9, 1.0, w->val.data(), col, 0.0,
         out.data() + i * c_out * hw);
    if (has_bias)
      for (int64_t c = 0; c < c_out; ++c) {
        double* row = out.data() + (i * c_out + c) * hw;
        for (int64_t l = 0; l < hw; ++l) row[l] += b->val[c];
      }
  }

  std::vector<Var> parents = {x, w};
  if (has_bias) parents.push_back(b);
  Var px = x, pw = w, pb = has_bias ? b : Var();
  return make_node(std::move(out), std::move(parents),
                   [px, pw, pb, cols, bs, c_in, c_out, h, wd, hw](Node& self) {
                     const double* g = self.grad.data();
                     Tensor dcol({c_in * 9, hw});
                     for (int64_t i = 0; i < bs; ++i) {
                       const double* gi = g + i * c_out * hw;
                       const double* col = cols->data() + i * c_in * 9 * hw;
                       if (pw->requires_grad)
                         gemm(false, true, c_out, c_in * 9, hw, 1.0, gi, col, 1.0,
                              pw->grad_buf().data());
                       if (px->requires_grad) {
                         gemm(true, false, c_in * 9, hw, c_out, 1.0, pw->val.data(), gi, 0.0,
                              dcol.data());
                         col2im2d(dcol.data(), c_in, h, wd,
                                  px->grad_buf().data() + i * c_in * hw);
                       }
                       if (pb && pb->requires_grad) {
                         Tensor& db = pb->grad_buf();
                         for (int64_t c = 0; c < c_out; ++c) {
                           double s = 0;
                           for (int64_t l = 0; l < hw; ++l) s += gi[c * hw + l];
                           db.data()[c] += s;
                         }
                       }
                     }
                   });
}

Var layer_norm(const Var& x, const Var& g, const Var& b, double eps) {
  const int64_t d = x->val.dim(x->val.rank() - 1);
  if (g->val.numel() != d || b->val.numel() != d) throw ShapeError("layer_norm: affine size");
  const int64_t rows = fold_rows(x->val.shape());

  auto xhat = std::make_shared<Tensor>(x->val.shape());
  auto rstd = std::make_shared<Tensor>(Shape{rows});
  Tensor out(x->val.shape());
  for (int64_t i = 0; i < rows; ++i) {
    const double* xr = x->val.data() + i * d;
    double mean = 0;
    for (int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= double(d);
    double var = 0;
    for (int64_t j = 0; j < d; ++j) {
      double c = xr[j] - mean;
      var += c * c;
    }
    var /= double(d);
    double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[i] = rs;
    double* xh = xhat->data() + i * d;
    double* o = out.data() + i * d;
    for (int64_t j = 0; j < d; ++j) {
      xh[j] = (xr[j] - mean) * rs;
      o[j] = xh[j] * g->val[j] + b->val[j];
    }
  }

  Var px = x, pg = g, pb = b;
  return make_node(std::move(out), {x, g, b}, [px, pg, pb, xhat, rstd, rows, d](Node& self) {
    const double* gr = self.grad.data();
    for (int64_t i = 0; i < rows; ++i) {
      const double* dy = gr + i * d;
      const double* xh = xhat->data() + i * d;
      if (pg->requires_grad) {
        Tensor& dg = pg->grad_buf();
        for (int64_t j = 0; j < d; ++j) dg.data()[j] += dy[j] * xh[j];
      }
      if (pb->requires_grad) {
        Tensor& db = pb->grad_buf();
        for (int64_t j = 0; j < d; ++j) db.data()[j] += dy[j];
      }
      if (px->requires_grad) {
        // dx = rstd * (dxh - mean(dxh) - xh * mean(dxh .* xh))
        double m1 = 0, m2 = 0;
        for (int64_t j = 0; j < d; ++j) {
          double dxh = dy[j] * pg->val[j];
          m1 += dxh;
          m2 += dxh * xh[j];
        }
        m1 /= double(d);
        m2 /= double(d);
        double rs = (*rstd)[i];
        double* dx = px->grad_buf().data() + i * d;
        for (int64_t j = 0; j < d; ++j) {
          double dxh = dy[j] * pg->val[j];
          dx[j] += rs * (dxh - m1 - xh[j] * m2);
        }
      }
    }
  });
}

Var multihead_attention(const Var& x, const Var& wqkv, const Var& bqkv, const Var& wo,
                        const Var& bo, int64_t n_heads, bool causal) {
  if (x->val.rank() != 3) throw ShapeError("multihead_attention: expects [B, L, D]");
  const int64_t bs = x->val.dim(0), l = x->val.dim(1), d = x->val.dim(2);
  if (d % n_heads != 0) throw ConfigError("multihead_attention: D not divisible by heads");
  if (wqkv->val.dim(0) != 3 * d || wqkv->val.dim(1) != d || wo->val.dim(0) != d ||
      wo->val.dim(1) != d)
    throw ShapeError("multihead_attention: projection shapes");
  const int64_t dh = d / n_heads;
  const double sc = 1.0 / std::sqrt(double(dh));
  const int64_t m = bs * l;

  auto qkv = std::make_shared<Tensor>(Shape{bs, l, 3 * d});
  gemm(false, true, m, 3 * d, d, 1.0, x->val.data(), wqkv->val.data(), 0.0, qkv->data());
  for (int64_t i = 0; i < m; ++i) {
    double* row = qkv->data() + i * 3 * d;
    for (int64_t j = 0; j < 3 * d; ++j) row[j] += bqkv->val[j];
  }

  auto probs = std::make_shared<Tensor>(Shape{bs, n_heads, l, l});
  auto ctx = std::make_shared<Tensor>(Shape{bs, l, d});
  Tensor qh({l, dh}), kh({l, dh}), vh({l, dh}), sh({l, l}), ch({l, dh});
  for (int64_t i = 0; i < bs; ++i) {
    for (int64_t hh = 0; hh < n_heads; ++hh) {
      for (int64_t t = 0; t < l; ++t) {
        const double* row = qkv->data() + (i * l + t) * 3 * d + hh * dh;
        for (int64_t j = 0; j < dh; ++j) {
          qh.data()[t * dh + j] = row[j];
          kh.data()[t * dh + j] = row[d + j];
          vh.data()[t * dh + j] = row[2 * d + j];
        }
      }
      gemm(false, true, l, l, dh, sc, qh.data(), kh.data(), 0.0, sh.data());
      double* pr = probs->data() + (i * n_heads + hh) * l * l;
      for (int64_t r = 0; r < l; ++r) {
        double* srow = sh.data() + r * l;
        int64_t lim = causal ? r + 1 : l;
        double mx = srow[0];
        for (int64_t cnt = 1; cnt < lim; ++cnt) mx = std::max(mx, srow[cnt]);
        double sum = 0;
        for (int64_t cnt = 0; cnt < lim; ++cnt) {
          srow[cnt] = std::exp(srow[cnt] - mx);
          sum += srow[cnt];
        }
        for (int64_t cnt = 0; cnt < lim; ++cnt) pr[r * l + cnt] = srow[cnt] / sum;
        for (int64_t cnt = lim; cnt < l; ++cnt) pr[r * l + cnt] = 0.0;
      }
      gemm(false, false, l, dh, l, 1.0, pr, vh.data(), 0.0, ch.data());
      for (int64_t t = 0; t < l; ++t) {
        double* dst = ctx->data() + (i * l + t) * d + hh * dh;
        for (int64_t j = 0; j < dh; ++j) dst[j] = ch.data()[t * dh + j];
      }
    }
  }

  Tensor out({bs, l, d});
  gemm(false, true, m, d, d, 1.0, ctx->data(), wo->val.data(), 0.0, out.data());
  for (int64_t i = 0; i < m; ++i) {
    double* row = out.data() + i * d;
    for (int64_t j = 0; j < d; ++j) row[j] += bo->val[j];
  }

  Var px = x, pwq = wqkv, pbq = bqkv, pwo = wo, pbo = bo;
  return make_node(
      std::move(out), {x, wqkv, bqkv, wo, bo},
      [px, pwq, pbq, pwo, pbo, qkv, probs, ctx, bs, l, d, dh, n_heads, sc, m](Node& self) {
        const double* g = self.grad.data();
        if (pwo->requires_grad)
          gemm(true, false, d, d, m, 1.0, g, ctx->data(), 1.0, pwo->grad_buf().data());
        if (pbo->requires_grad) add_col_sums(self.grad, m, d, pbo->grad_buf());

        Tensor dctx({bs, l, d});
        gemm(false, false, m, d, d, 1.0, g, pwo->val.data(), 0.0, dctx.data());

        Tensor dqkv({bs, l, 3 * d}); // zero init
        Tensor qh({l, dh}), kh({l, dh}), vh({l, dh});
        Tensor dch({l, dh}), dpr({l, l}), dsh({l, l}), dq({l, dh}), dk({l, dh}), dv({l, dh});
        for (int64_t i = 0; i < bs; ++i) {
          for (int64_t hh = 0; hh < n_heads; ++hh) {
            for (int64_t t = 0; t < l; ++t) {
              const double* row = qkv->data() + (i * l + t) * 3 * d + hh * dh;
              const double* dc = dctx.data() + (i * l + t) * d + hh * dh;
              for (int64_t j = 0; j < dh; ++j) {
                qh.data()[t * dh + j] = row[j];
                kh.data()[t * dh + j] = row[d + j];
                vh.data()[t * dh + j] = row[2 * d + j];
                dch.data()[t * dh + j] = dc[j];
              }
            }
            const double* pr = probs->data() + (i * n_heads + hh) * l * l;
            // dV = P^T dC ; dP = dC V^T
            gemm(true, false, l, dh, l, 1.0, pr, dch.data(), 0.0, dv.data());
            gemm(false, true, l, l, dh, 1.0, dch.data(), vh.data(), 0.0, dpr.data());
            for (int64_t r = 0; r < l; ++r) {
              double dot = 0;
              for (int64_t cnt = 0; cnt < l; ++cnt) dot += dpr.data()[r * l + cnt] * pr[r * l + cnt];
              for (int64_t cnt = 0; cnt < l; ++cnt)
                dsh.data()[r * l + cnt] = pr[r * l + cnt] * (dpr.data()[r * l + cnt] - dot);
            }
            gemm(false, false, l, dh, l, sc, dsh.data(), kh.data(), 0.0, dq.data());
            gemm(true, false, l, dh, l, sc, dsh.data(), qh.data(), 0.0, dk.data());
            for (int64_t t = 0; t < l; ++t) {
              double* row = dqkv.data() + (i * l + t) * 3 * d + hh * dh;
              for (int64_t j = 0; j < dh; ++j) {
                row[j] += dq.data()[t * dh + j];
                row[d + j] += dk.data()[t * dh + j];
                row[2 * d + j] += dv.data()[t * dh + j];
              }
            }
          }
        }

        if (pbq->requires_grad) add_col_sums(dqkv, m, 3 * d, pbq->grad_buf());
        if (pwq->requires_grad)
          gemm(true, false, 3 * d, d, m, 1.0, dqkv.data(), px->val.data(), 1.0,
               pwq->grad_buf().data());
        if (px->requires_grad)
          gemm(false, false, m, d, 3 * d, 1.0, dqkv.data(), pwq->val.data(), 1.0,
               px->grad_buf().data());
      });
}

Var moe_delta(const Var& x, const std::vector<Var>& a, const std::vector<Var>& b,
              const Var& omega, double sc) {
  const size_t ne = a.size();
  if (ne == 0 || b.size() != ne) throw ShapeError("moe_delta: expert list mismatch");
  if (omega->val.numel() != int64_t(ne)) throw ShapeError("moe_delta: omega size mismatch");
  const int64_t d_in = a[0]->val.dim(1), r = a[0]->val.dim(0);
  const int64_t d_out = b[0]->val.dim(0);
  for (size_t k = 0; k < ne; ++k) {
    if (a[k]->val.dim(0) != r || a[k]->val.dim(1) != d_in || b[k]->val.dim(0) != d_out ||
        b[k]->val.dim(1) != r)
      throw ShapeError("moe_delta: heterogeneous expert shapes");
  }
  if (x->val.dim(x->val.rank() - 1) != d_in) throw ShapeError("moe_delta: input dim mismatch");
  const int64_t m = fold_rows(x->val.shape());

  auto us = std::make_shared<std::vector<Tensor>>();
  us->reserve(ne);
  Shape out_shape = x->val.shape();
  out_shape.back() = d_out;
  Tensor out(out_shape); // zeros
  for (size_t k = 0; k < ne; ++k) {
    Tensor u({m, r});
    gemm(false, true, m, r, d_in, 1.0, x->val.data(), a[k]->val.data(), 0.0, u.data());
    gemm(false, true, m, d_out, r, sc * omega->val[int64_t(k)], u.data(), b[k]->val.data(), 1.0,
         out.data());
    us->push_back(std::move(u));
  }

  std::vector<Var> parents = {x, omega};
  parents.insert(parents.end(), a.begin(), a.end());
  parents.insert(parents.end(), b.begin(), b.end());
  Var px = x, pom = omega;
  std::vector<Var> pa = a, pb = b;
  return make_node(std::move(out), std::move(parents),
                   [px, pom, pa, pb, us, sc, m, r, d_in, d_out](Node& self) {
                     const double* g = self.grad.data();
                     Tensor v({m, r});
                     for (size_t k = 0; k < pa.size(); ++k) {
                       const double w = pom->val[int64_t(k)];
                       // V = dY * B_k
                       gemm(false, false, m, r, d_out, 1.0, g, pb[k]->val.data(), 0.0, v.data());
                       if (pom->requires_grad) {
                         double dot = 0;
                         const Tensor& u = (*us)[k];
                         for (int64_t i = 0; i < m * r; ++i) dot += v[i] * u[i];
                         pom->grad_buf().data()[k] += sc * dot;
                       }
                       if (pb[k]->requires_grad)
                         gemm(true, false, d_out, r, m, sc * w, g, (*us)[k].data(), 1.0,
                              pb[k]->grad_buf().data());
                       if (pa[k]->requires_grad)
                         gemm(true, false, r, d_in, m, sc * w, v.data(), px->val.data(), 1.0,
                              pa[k]->grad_buf().data());
                       if (px->requires_grad)
                         gemm(false, false, m, d_in, r, sc * w, v.data(), pa[k]->val.data(), 1.0,
                              px->grad_buf().data());
                     }
                   });
}

// --- losses -------------------------------------------------------------------

Var nmse_loss(const Var& pred, const Tensor& target, double eps) {
  if (!pred->val.same_shape(target)) throw ShapeError("nmse_loss: shape mismatch");
  double num = 0, den = 0;
  for (int64_t i = 0; i < target.numel(); ++i) {
    double d = pred->val[i] - target[i];
    num += d * d;
    den += target[i] * target[i];
  }
  den = std::max(den, eps);
  Tensor out({1}, std::vector<double>{num / den});
  Var pp = pred;
  Tensor tgt = target;
  return make_node(std::move(out), {pred}, [pp, tgt, den](Node& self) {
    if (!pp->requires_grad) return;
    const double gl = self.grad[0];
    Tensor& dst = pp->grad_buf();
    const double c = 2.0 * gl / den;
    for (int64_t i = 0; i < tgt.numel(); ++i) dst.data()[i] += c * (pp->val[i] - tgt[i]);
  });
}

Var cross_entropy_loss(const Var& logits, const std::vector<int64_t>& labels) {
  if (logits->val.rank() != 2) throw ShapeError("cross_entropy_loss: expects [B, C]");
  const int64_t bs = logits->val.dim(0), c = logits->val.dim(1);
  if (int64_t(labels.size()) != bs) throw ShapeError("cross_entropy_loss: label count");
  for (int64_t y : labels)
    if (y < 0 || y >= c) throw DomainError("cross_entropy_loss: label out of range");

  auto probs = std::make_shared<Tensor>(Shape{bs, c});
  double loss = 0;
  for (int64_t i = 0; i < bs; ++i) {
    const double* z = logits->val.data() + i * c;
    double mx = z[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    double sum = 0;
    for (int64_t j = 0; j < c; ++j) sum += std::exp(z[j] - mx);
    double lse = mx + std::log(sum);
    loss += lse - z[labels[size_t(i)]];
    double* p = probs->data() + i * c;
    for (int64_t j = 0; j < c; ++j) p[j] = std::exp(z[j] - lse);
  }
  loss /= double(bs);

  Var pl = logits;
  std::vector<int64_t> lab = labels;
  return make_node(Tensor({1}, {loss}), {logits}, [pl, probs, lab, bs, c](Node& self) {
    if (!pl->requires_grad) return;
    const double gl = self.grad[0] / double(bs);
    Tensor& dst = pl->grad_buf();
    for (int64_t i = 0; i < bs; ++i) {
      const double* p = probs->data() + i * c;
      double* d = dst.data() + i * c;
      for (int64_t j = 0; j < c; ++j) d[j] += gl * p[j];
      d[lab[size_t(i)]] -= gl;
    }
  });
}

Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& coeffs) {
  if (scalars.empty() || scalars.size() != coeffs.size())
    throw ShapeError("weighted_sum: size mismatch");
  double total = 0;
  for (size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i]->val.numel() != 1) throw ShapeError("weighted_sum: inputs must be scalar");
    total += coeffs[i] * scalars[i]->val[0];
  }
  std::vector<Var> parents = scalars;
  std::vector<double> cs = coeffs;
  return make_node(Tensor({1}, {total}), std::move(parents), [cs](Node& self) {
    for (size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = *self.parents[i];
      if (p.requires_grad) p.grad_buf().data()[0] += cs[i] * self.grad[0];
    }
  });
}

} // namespace wm4
