// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#pragma once

#include <string>
#include <vector>

#include "wm4/autodiff.hpp"
#include "wm4/tensor_io.hpp"

namespace wm4 {

// Ordered registry of named parameters. Insertion order is the canonical
// iteration order everywhere (optimizer, checkpoints, hashing), so runs are
// reproducible as long as construction order is.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init); // duplicate name -> ConfigError
  Var get(const std::string& name) const;        // missing -> ConfigError
  bool has(const std::string& name) const;

  const std::vector<Var>& all() const { return order_; }
  std::vector<Var> with_prefix(const std::string& prefix) const;
  std::vector<Var> trainable() const;

  void set_trainable(const std::string& prefix, bool on);
  void set_all_trainable(bool on);

  /// Total scalar count under a prefix ("" for everything).
  int64_t count(const std::string& prefix = "") const;
  int64_t count_trainable() const;

  /// Order-independent hash of names, shapes and values.
  uint64_t content_hash() const;

  TensorArchive to_archive() const;
  /// Copies values for every matching name; shape mismatch throws IoError.
  /// strict requires the archive and the store to cover the same names.
  void load_archive(const TensorArchive& ar, bool strict = true);

 private:
  std::vector<Var> order_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed parameter list. A parameter without a gradient this step
// contributes g = 0 (moments still decay), matching the usual framework
// behavior under task-alternating batches.
class Adam {
 public:
  explicit Adam(std::vector<Var> params, AdamConfig cfg = {});
  void step(double lr);
  int64_t t() const { return t_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

// Common initializers.
Tensor init_linear(Rng& rng, int64_t fan_in, int64_t fan_out); // [fan_out, fan_in], N(0, 1/fan_in)
Tensor init_normal(Rng& rng, Shape shape, double stddev);
Tensor init_zeros(Shape shape);
Tensor init_ones(Shape shape);

} // namespace wm4
