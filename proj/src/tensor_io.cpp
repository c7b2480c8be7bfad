// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#include "wm4/tensor_io.hpp"

#include <bit>
#include <filesystem>
#include <fstream>

namespace wm4 {

namespace {

constexpr uint32_t kVersion = 1;
const char kMagic[4] = {'W', 'M', '4', 'D'};

void put_f32(std::vector<unsigned char>& buf, float v) {
  uint32_t u = std::bit_cast<uint32_t>(v);
  for (int i = 0; i < 4; ++i) buf.push_back((unsigned char)((u >> (8 * i)) & 0xff));
}

void put_f64(std::vector<unsigned char>& buf, double v) {
  uint64_t u = std::bit_cast<uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf.push_back((unsigned char)((u >> (8 * i)) & 0xff));
}

float take_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }
double take_f64(const unsigned char* p) { return std::bit_cast<double>(get_u64(p)); }

} // namespace

size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::F32: return 4;
    case Dtype::F64: return 8;
    case Dtype::C64: return 8; // two f32
    case Dtype::I32: return 4;
    case Dtype::I64: return 8;
  }
  throw IoError("dtype_size: unknown dtype");
}

NamedTensor NamedTensor::f64(std::string name, Shape dims, const double* v) {
  NamedTensor t;
  t.name = std::move(name);
  t.dtype = Dtype::F64;
  t.dims = std::move(dims);
  int64_t n = t.numel();
  t.payload.reserve(size_t(n) * 8);
  for (int64_t i = 0; i < n; ++i) put_f64(t.payload, v[i]);
  return t;
}

NamedTensor NamedTensor::f32(std::string name, Shape dims, const double* v) {
  NamedTensor t;
  t.name = std::move(name);
  t.dtype = Dtype::F32;
  t.dims = std::move(dims);
  int64_t n = t.numel();
  t.payload.reserve(size_t(n) * 4);
  for (int64_t i = 0; i < n; ++i) put_f32(t.payload, float(v[i]));
  return t;
}

NamedTensor NamedTensor::c64(std::string name, Shape dims, const cdouble* v) {
  NamedTensor t;
  t.name = std::move(name);
  t.dtype = Dtype::C64;
  t.dims = std::move(dims);
  int64_t n = t.numel();
  t.payload.reserve(size_t(n) * 8);
  for (int64_t i = 0; i < n; ++i) {
    put_f32(t.payload, float(v[i].real()));
    put_f32(t.payload, float(v[i].imag()));
  }
  return t;
}

NamedTensor NamedTensor::i64(std::string name, Shape dims, const int64_t* v) {
  NamedTensor t;
  t.name = std::move(name);
  t.dtype = Dtype::I64;
  t.dims = std::move(dims);
  int64_t n = t.numel();
  t.payload.reserve(size_t(n) * 8);
  for (int64_t i = 0; i < n; ++i) {
    uint64_t u = uint64_t(v[i]);
    for (int b = 0; b < 8; ++b) t.payload.push_back((unsigned char)((u >> (8 * b)) & 0xff));
  }
  return t;
}

std::vector<double> NamedTensor::as_f64() const {
  int64_t n = numel();
  std::vector<double> out(static_cast<size_t>(n));
  if (dtype == Dtype::F64) {
    for (int64_t i = 0; i < n; ++i) out[size_t(i)] = take_f64(payload.data() + i * 8);
  } else if (dtype == Dtype::F32) {
    for (int64_t i = 0; i < n; ++i) out[size_t(i)] = double(take_f32(payload.data() + i * 4));
  } else {
    throw IoError("NamedTensor::as_f64: tensor '" + name + "' is not real-valued");
  }
  return out;
}

std::vector<cdouble> NamedTensor::as_c64() const {
  if (dtype != Dtype::C64) throw IoError("NamedTensor::as_c64: tensor '" + name + "' not complex");
  int64_t n = numel();
  std::vector<cdouble> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    out[size_t(i)] = {double(take_f32(payload.data() + i * 8)),
                      double(take_f32(payload.data() + i * 8 + 4))};
  return out;
}

std::vector<int64_t> NamedTensor::as_i64() const {
  int64_t n = numel();
  std::vector<int64_t> out(static_cast<size_t>(n));
  if (dtype == Dtype::I64) {
    for (int64_t i = 0; i < n; ++i) out[size_t(i)] = int64_t(get_u64(payload.data() + i * 8));
  } else if (dtype == Dtype::I32) {
    for (int64_t i = 0; i < n; ++i) out[size_t(i)] = int32_t(get_u32(payload.data() + i * 4));
  } else {
    throw IoError("NamedTensor::as_i64: tensor '" + name + "' is not integer");
  }
  return out;
}

void TensorArchive::add(NamedTensor t) {
  if (has(t.name)) throw IoError("TensorArchive: duplicate tensor name '" + t.name + "'");
  if (int64_t(t.payload.size()) != t.numel() * int64_t(dtype_size(t.dtype)))
    throw IoError("TensorArchive: payload size mismatch for '" + t.name + "'");
  tensors.push_back(std::move(t));
}

bool TensorArchive::has(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

const NamedTensor& TensorArchive::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw IoError("TensorArchive: missing tensor '" + name + "'");
}

std::string TensorArchive::serialize() const {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u32(buf, uint32_t(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(buf, uint32_t(t.name.size()));
    buf.append(t.name);
    put_u32(buf, uint32_t(t.dtype));
    put_u32(buf, uint32_t(t.dims.size()));
    for (int64_t d : t.dims) put_u64(buf, uint64_t(d));
    buf.append(reinterpret_cast<const char*>(t.payload.data()), t.payload.size());
  }
  return buf;
}

TensorArchive TensorArchive::parse(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  size_t n = bytes.size(), off = 0;
  auto need = [&](size_t k) {
    if (off + k > n) throw IoError("TensorArchive: truncated archive");
  };
  need(12);
  if (std::memcmp(p, kMagic, 4) != 0) throw IoError("TensorArchive: bad magic");
  uint32_t version = get_u32(p + 4);
  if (version != kVersion) throw IoError("TensorArchive: unsupported version");
  uint32_t count = get_u32(p + 8);
  off = 12;

  TensorArchive ar;
  for (uint32_t i = 0; i < count; ++i) {
    need(4);
    uint32_t name_len = get_u32(p + off);
    off += 4;
    need(name_len);
    NamedTensor t;
    t.name.assign(bytes, off, name_len);
    off += name_len;
    need(8);
    t.dtype = Dtype(get_u32(p + off));
    uint32_t rank = get_u32(p + off + 4);
    off += 8;
    need(size_t(rank) * 8);
    t.dims.resize(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      t.dims[d] = int64_t(get_u64(p + off));
      off += 8;
    }
    size_t bytes_needed = size_t(t.numel()) * dtype_size(t.dtype);
    need(bytes_needed);
    t.payload.assign(p + off, p + off + bytes_needed);
    off += bytes_needed;
    ar.add(std::move(t));
  }
  return ar;
}

void TensorArchive::save(const std::string& path) const { write_file(path, serialize()); }

TensorArchive TensorArchive::load(const std::string& path) {
  return parse(read_file(path));
}

uint64_t TensorArchive::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& t : tensors) {
    h = fnv1a64(t.name, h);
    h = fnv1a64(t.payload.data(), t.payload.size(), h);
  }
  return h;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open file: " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return data;
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write file: " + path);
  f.write(data.data(), std::streamsize(data.size()));
  if (!f) throw IoError("write failed: " + path);
}

bool path_exists(const std::string& path) { return std::filesystem::exists(path); }

void make_dirs(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory: " + path + " (" + ec.message() + ")");
}

} // namespace wm4
