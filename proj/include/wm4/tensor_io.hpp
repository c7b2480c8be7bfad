// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wm4/common.hpp"
#include "wm4/tensor.hpp"

namespace wm4 {

// Named-tensor container, used for datasets, checkpoints and weight archives.
// Layout (all integers little-endian regardless of host):
//   magic "WM4D" | version u32 | tensor_count u32
//   per tensor: name_len u32 | name bytes | dtype u32 | rank u32 |
//               dims u64[rank] | payload (row-major, little-endian)
// Bit-exact across platforms by construction.

enum class Dtype : uint32_t { F32 = 1, F64 = 2, C64 = 3, I32 = 4, I64 = 5 };

size_t dtype_size(Dtype d);

struct NamedTensor {
  std::string name;
  Dtype dtype = Dtype::F64;
  Shape dims;
  std::vector<unsigned char> payload;

  int64_t numel() const { return shape_numel(dims); }

  static NamedTensor f64(std::string name, Shape dims, const double* v);
  static NamedTensor f32(std::string name, Shape dims, const double* v);
  static NamedTensor c64(std::string name, Shape dims, const cdouble* v); // float pairs
  static NamedTensor i64(std::string name, Shape dims, const int64_t* v);

  std::vector<double> as_f64() const;  // accepts F32 or F64
  std::vector<cdouble> as_c64() const; // C64 only
  std::vector<int64_t> as_i64() const; // I32 or I64
};

struct TensorArchive {
  std::vector<NamedTensor> tensors;

  void add(NamedTensor t); // duplicate name -> IoError
  bool has(const std::string& name) const;
  const NamedTensor& get(const std::string& name) const; // missing -> IoError

  std::string serialize() const;
  static TensorArchive parse(const std::string& bytes);
  void save(const std::string& path) const;
  static TensorArchive load(const std::string& path);

  uint64_t content_hash() const;
};

// Small filesystem helpers shared by dataset/checkpoint/report writers.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& data);
bool path_exists(const std::string& path);
void make_dirs(const std::string& path);

} // namespace wm4
