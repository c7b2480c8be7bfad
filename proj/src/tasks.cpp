// SPDX-License-Identifier: Apache-2.0
//
// wm4 - dual-band channel simulation and multi-task model toolkit
// Copyright (C) 2026 wm4 contributors

#include "wm4/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "wm4/tensor_io.hpp"

namespace wm4 {

using nlohmann::json;

const std::array<TaskId, kNumTasks>& all_tasks() {
  static const std::array<TaskId, kNumTasks> a = {TaskId::CE, TaskId::CP, TaskId::PF,
                                                  TaskId::BF, TaskId::DE, TaskId::PE};
  return a;
}

const char* task_name(TaskId t) {
  switch (t) {
    case TaskId::CE: return "ce";
    case TaskId::CP: return "cp";
    case TaskId::PF: return "pf";
    case TaskId::BF: return "bf";
    case TaskId::DE: return "de";
    case TaskId::PE: return "pe";
  }
  throw DomainError("task_name: bad TaskId");
}

TaskId task_from_name(const std::string& s) {
  for (TaskId t : all_tasks())
    if (s == task_name(t)) return t;
  throw ConfigError("unknown task name: " + s);
}

bool task_is_reconstruction(TaskId t) {
  return t == TaskId::CE || t == TaskId::CP || t == TaskId::PF;
}

void TaskConfig::validate(const ScenarioConfig& sc) const {
  if (hist_timestamps < 1 || hist_timestamps >= sc.timestamps)
    throw ConfigError("TaskConfig: hist_timestamps must be in [1, timestamps)");
  if (pilot_comb < 1 || sc.subcarriers % pilot_comb != 0)
    throw ConfigError("TaskConfig: pilot_comb must divide the subcarrier count");
  if (sc.subcarriers % 2 != 0)
    throw ConfigError("TaskConfig: frequency split needs an even subcarrier count");
  if (codebook_beams < sc.mm_antennas)
    throw ConfigError("TaskConfig: codebook_beams must be >= mm antennas");
  if (!(bf_label_snr_db > -100.0 && bf_label_snr_db < 100.0))
    throw ConfigError("TaskConfig: bf_label_snr_db out of range");
}

// --- complex/real stacking ---------------------------------------------------

Tensor stack_complex(const std::vector<cdouble>& v, Shape complex_dims) {
  int64_t n = shape_numel(complex_dims);
  if (n != int64_t(v.size())) throw ShapeError("stack_complex: dims do not match data");
  if (complex_dims.empty()) throw ShapeError("stack_complex: rank must be >= 1");
  int64_t last = complex_dims.back();
  int64_t rows = n / std::max<int64_t>(last, 1);
  Shape out_dims = complex_dims;
  out_dims.back() = 2 * last;
  Tensor out(out_dims);
  double* o = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const cdouble* src = v.data() + r * last;
    double* dst = o + r * 2 * last;
    for (int64_t i = 0; i < last; ++i) {
      dst[i] = src[i].real();
      dst[last + i] = src[i].imag();
    }
  }
  return out;
}

std::vector<cdouble> unstack_complex(const Tensor& t) {
  if (t.rank() < 1 || t.shape().back() % 2 != 0)
    throw ShapeError("unstack_complex: last dim must be even");
  int64_t last = t.shape().back() / 2;
  int64_t rows = t.numel() / (2 * last);
  std::vector<cdouble> out(static_cast<size_t>(rows * last));
  const double* p = t.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = p + r * 2 * last;
    for (int64_t i = 0; i < last; ++i)
      out[size_t(r * last + i)] = {src[i], src[last + i]};
  }
  return out;
}

// --- slicing helpers -----------------------------------------------------------

static cdouble q32(cdouble z) {
  return {double(float(z.real())), double(float(z.imag()))};
}

static std::vector<cdouble> quantize32(const std::vector<cdouble>& v) {
  std::vector<cdouble> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = q32(v[i]);
  return out;
}

// Row-major [t_count, k_count, nt] gather over timestamp range and a strided
// subcarrier comb.
static std::vector<cdouble> slice_csi(const CsiTensor& h, int t0, int t_count, int k0, int k_step,
                                      int k_count) {
  std::vector<cdouble> out;
  out.reserve(size_t(t_count) * k_count * h.nt);
  for (int i = 0; i < t_count; ++i)
    for (int j = 0; j < k_count; ++j) {
      const cdouble* row = &h.at(t0 + i, k0 + j * k_step, 0);
      out.insert(out.end(), row, row + h.nt);
    }
  return out;
}

// --- per-sample dims ------------------------------------------------------------

Shape task_input_dims(TaskId t, const ScenarioConfig& sc, const TaskConfig& tc) {
  int64_t feat = 2 * sc.sub6_antennas;
  switch (t) {
    case TaskId::CE: return {tc.hist_timestamps, sc.subcarriers / tc.pilot_comb, feat};
    case TaskId::CP: return {tc.hist_timestamps, sc.subcarriers, feat};
    case TaskId::PF: return {tc.hist_timestamps, sc.subcarriers / 2, feat};
    case TaskId::BF:
    case TaskId::DE:
    case TaskId::PE: return {1, sc.subcarriers, feat};
  }
  throw DomainError("task_input_dims: bad TaskId");
}

Shape task_label_dims(TaskId t, const ScenarioConfig& sc, const TaskConfig& tc) {
  int64_t feat = 2 * sc.sub6_antennas;
  switch (t) {
    case TaskId::CE: return {tc.hist_timestamps, sc.subcarriers, feat};
    case TaskId::CP: return {sc.timestamps - tc.hist_timestamps, sc.subcarriers, feat};
    case TaskId::PF: return {tc.hist_timestamps, sc.subcarriers / 2, feat};
    case TaskId::BF: return {}; // class index
    case TaskId::DE:
    case TaskId::PE: return {1};
  }
  throw DomainError("task_label_dims: bad TaskId");
}

// --- builders --------------------------------------------------------------------

TaskSample build_ce(const CsiTensor& h, const TaskConfig& tc) {
  TaskSample s;
  s.task = TaskId::CE;
  int t = tc.hist_timestamps, comb = tc.pilot_comb;
  int kp = h.k / comb;
  s.input = stack_complex(slice_csi(h, 0, t, 0, comb, kp), {t, kp, h.nt});
  s.label = stack_complex(slice_csi(h, 0, t, 0, 1, h.k), {t, h.k, h.nt});
  return s;
}

TaskSample build_cp(const CsiTensor& h, const TaskConfig& tc) {
  TaskSample s;
  s.task = TaskId::CP;
  int t = tc.hist_timestamps, p = h.t - t;
  s.input = stack_complex(slice_csi(h, 0, t, 0, 1, h.k), {t, h.k, h.nt});
  s.label = stack_complex(slice_csi(h, t, p, 0, 1, h.k), {p, h.k, h.nt});
  return s;
}

TaskSample build_pf(const CsiTensor& h, const TaskConfig& tc) {
  TaskSample s;
  s.task = TaskId::PF;
  int t = tc.hist_timestamps, half = h.k / 2;
  s.input = stack_complex(slice_csi(h, 0, t, 0, 1, half), {t, half, h.nt});
  s.label = stack_complex(slice_csi(h, 0, t, half, 1, half), {t, half, h.nt});
  return s;
}

TaskSample build_bf(const CsiTensor& h_sub6, const CsiTensor& h_mm, const Codebook& cb,
                    const TaskConfig& tc) {
  TaskSample s;
  s.task = TaskId::BF;
  s.input = stack_complex(slice_csi(h_sub6, 0, 1, 0, 1, h_sub6.k), {1, h_sub6.k, h_sub6.nt});
  s.aux_mm = h_mm.data;
  auto [idx, se] = best_beam(h_mm.data, h_mm.k, h_mm.nt, cb, SeConfig::from_snr_db(tc.bf_label_snr_db));
  (void)se;
  s.beam_index = idx;
  return s;
}

TaskSample build_de(const CsiTensor& h, double x_d, const TaskConfig& tc) {
  (void)tc;
  TaskSample s;
  s.task = TaskId::DE;
  s.input = stack_complex(slice_csi(h, 0, 1, 0, 1, h.k), {1, h.k, h.nt});
  s.raw_scalar = x_d;
  s.label = Tensor({1}, std::vector<double>{x_d}); // normalized once stats exist
  return s;
}

TaskSample build_pe(const CsiTensor& h, double x_pl, const TaskConfig& tc) {
  (void)tc;
  TaskSample s;
  s.task = TaskId::PE;
  s.input = stack_complex(slice_csi(h, 0, 1, 0, 1, h.k), {1, h.k, h.nt});
  s.raw_scalar = x_pl;
  s.label = Tensor({1}, std::vector<double>{x_pl});
  return s;
}

// --- dataset assembly ----------------------------------------------------------

const SplitData& DatasetBundle::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ConfigError("unknown split: " + name);
}

std::array<int64_t, 3> DatasetBundle::split_counts() const {
  return {int64_t(train.by_task[0].size()), int64_t(val.by_task[0].size()),
          int64_t(test.by_task[0].size())};
}

json scenario_to_json(const ScenarioConfig& c) {
  json j;
  j["sub6_carrier_hz"] = c.sub6_carrier_hz;
  j["sub6_bandwidth_hz"] = c.sub6_bandwidth_hz;
  j["sub6_antennas"] = c.sub6_antennas;
  j["mm_carrier_hz"] = c.mm_carrier_hz;
  j["mm_bandwidth_hz"] = c.mm_bandwidth_hz;
  j["mm_antennas"] = c.mm_antennas;
  j["subcarriers"] = c.subcarriers;
  j["antenna_spacing_wl"] = c.antenna_spacing_wl;
  j["clusters"] = c.clusters;
  j["paths_per_cluster"] = c.paths_per_cluster;
  j["ue_speed_kmh"] = c.ue_speed_kmh;
  j["time_step_s"] = c.time_step_s;
  j["timestamps"] = c.timestamps;
  j["min_ue_distance_m"] = c.min_ue_distance_m;
  j["max_cell_radius_m"] = c.max_cell_radius_m;
  j["sub6_k_factor_db"] = c.sub6_k_factor_db;
  j["mm_k_factor_db"] = c.mm_k_factor_db;
  j["k_factor_std_db"] = c.k_factor_std_db;
  j["delay_spread_s"] = c.delay_spread_s;
  j["aod_sector_deg"] = c.aod_sector_deg;
  j["intra_cluster_aod_std_deg"] = c.intra_cluster_aod_std_deg;
  j["seed"] = c.seed;
  return j;
}

ScenarioConfig scenario_from_json(const json& j) {
  ScenarioConfig c;
  c.sub6_carrier_hz = j.value("sub6_carrier_hz", c.sub6_carrier_hz);
  c.sub6_bandwidth_hz = j.value("sub6_bandwidth_hz", c.sub6_bandwidth_hz);
  c.sub6_antennas = j.value("sub6_antennas", c.sub6_antennas);
  c.mm_carrier_hz = j.value("mm_carrier_hz", c.mm_carrier_hz);
  c.mm_bandwidth_hz = j.value("mm_bandwidth_hz", c.mm_bandwidth_hz);
  c.mm_antennas = j.value("mm_antennas", c.mm_antennas);
  c.subcarriers = j.value("subcarriers", c.subcarriers);
  c.antenna_spacing_wl = j.value("antenna_spacing_wl", c.antenna_spacing_wl);
  c.clusters = j.value("clusters", c.clusters);
  c.paths_per_cluster = j.value("paths_per_cluster", c.paths_per_cluster);
  c.ue_speed_kmh = j.value("ue_speed_kmh", c.ue_speed_kmh);
  c.time_step_s = j.value("time_step_s", c.time_step_s);
  c.timestamps = j.value("timestamps", c.timestamps);
  c.min_ue_distance_m = j.value("min_ue_distance_m", c.min_ue_distance_m);
  c.max_cell_radius_m = j.value("max_cell_radius_m", c.max_cell_radius_m);
  c.sub6_k_factor_db = j.value("sub6_k_factor_db", c.sub6_k_factor_db);
  c.mm_k_factor_db = j.value("mm_k_factor_db", c.mm_k_factor_db);
  c.k_factor_std_db = j.value("k_factor_std_db", c.k_factor_std_db);
  c.delay_spread_s = j.value("delay_spread_s", c.delay_spread_s);
  c.aod_sector_deg = j.value("aod_sector_deg", c.aod_sector_deg);
  c.intra_cluster_aod_std_deg = j.value("intra_cluster_aod_std_deg", c.intra_cluster_aod_std_deg);
  c.seed = j.value("seed", c.seed);
  return c;
}

json task_to_json(const TaskConfig& c) {
  json j;
  j["hist_timestamps"] = c.hist_timestamps;
  j["pilot_comb"] = c.pilot_comb;
  j["codebook_beams"] = c.codebook_beams;
  j["bf_label_snr_db"] = c.bf_label_snr_db;
  j["input_snr_db"] =
      std::isfinite(c.input_snr_db) ? json(c.input_snr_db) : json("inf");
  return j;
}

TaskConfig task_from_json(const json& j) {
  TaskConfig c;
  c.hist_timestamps = j.value("hist_timestamps", c.hist_timestamps);
  c.pilot_comb = j.value("pilot_comb", c.pilot_comb);
  c.codebook_beams = j.value("codebook_beams", c.codebook_beams);
  c.bf_label_snr_db = j.value("bf_label_snr_db", c.bf_label_snr_db);
  if (j.contains("input_snr_db")) {
    const auto& v = j.at("input_snr_db");
    c.input_snr_db =
        v.is_string() ? std::numeric_limits<double>::infinity() : v.get<double>();
  }
  return c;
}

static json bundle_config_json(const DatasetBundle& b) {
  json j;
  j["scenario"] = scenario_to_json(b.scenario);
  j["task"] = task_to_json(b.task_cfg);
  j["n_total"] = b.n_total;
  j["fractions"] = b.fractions;
  j["seed"] = b.seed;
  return j;
}

uint64_t DatasetBundle::config_hash() const {
  return fnv1a64(bundle_config_json(*this).dump());
}

static void apply_input_noise(TaskSample& s, double snr_db, Rng& rng) {
  std::vector<cdouble> v = unstack_complex(s.input);
  v = quantize32(add_awgn(v, snr_db, rng));
  s.input = stack_complex(v, [&] {
    Shape d = s.input.shape();
    d.back() /= 2;
    return d;
  }());
}

DatasetBundle generate_dataset(const ScenarioConfig& sc, const TaskConfig& tc, int64_t n_total,
                               std::array<double, 3> fractions, uint64_t seed) {
  sc.validate();
  tc.validate(sc);
  if (n_total < 3) throw ConfigError("generate_dataset: n_total must be >= 3");
  double fsum = fractions[0] + fractions[1] + fractions[2];
  for (double f : fractions)
    if (f < 0.0) throw ConfigError("generate_dataset: negative split fraction");
  if (std::abs(fsum - 1.0) > 1e-9)
    throw ConfigError("generate_dataset: split fractions must sum to 1");

  DatasetBundle b;
  b.scenario = sc;
  b.task_cfg = tc;
  b.n_total = n_total;
  b.fractions = fractions;
  b.seed = seed;

  int64_t n_train = llround(fractions[0] * double(n_total));
  int64_t n_val = llround(fractions[1] * double(n_total));
  int64_t n_test = n_total - n_train - n_val;
  if (n_train < 1 || n_val < 0 || n_test < 0)
    throw ConfigError("generate_dataset: split sizes round to an invalid partition");

  Codebook cb = dft_codebook(sc.mm_antennas, tc.codebook_beams, sc.antenna_spacing_wl);
  bool noisy = std::isfinite(tc.input_snr_db);

  for (int64_t i = 0; i < n_total; ++i) {
    Rng rng = Rng::child(seed, uint64_t(i));
    PathSet ps = sample_paths(sc, rng);
    DualBandCsi dual = make_dual_band(ps, sc, rng);
    dual.sub6.data = quantize32(dual.sub6.data);
    dual.mm.data = quantize32(dual.mm.data);
    ScalarLabels lab = derive_labels(ps);

    std::array<TaskSample, kNumTasks> ss = {
        build_ce(dual.sub6, tc),          build_cp(dual.sub6, tc),
        build_pf(dual.sub6, tc),          build_bf(dual.sub6, dual.mm, cb, tc),
        build_de(dual.sub6, lab.distance_m, tc), build_pe(dual.sub6, lab.path_loss_db, tc)};
    SplitData& dst = i < n_train ? b.train : (i < n_train + n_val ? b.val : b.test);
    for (auto& s : ss) {
      s.sample_index = i;
      if (noisy) apply_input_noise(s, tc.input_snr_db, rng);
      dst.of(s.task).push_back(std::move(s));
    }
  }

  // scalar normalization from the training split only
  auto stats = [](const std::vector<TaskSample>& v, double& lo, double& hi) {
    lo = std::numeric_limits<double>::infinity();
    hi = -lo;
    for (const auto& s : v) {
      lo = std::min(lo, s.raw_scalar);
      hi = std::max(hi, s.raw_scalar);
    }
  };
  stats(b.train.of(TaskId::DE), b.norm.de_min, b.norm.de_max);
  stats(b.train.of(TaskId::PE), b.norm.pe_min, b.norm.pe_max);
  if (!(b.norm.de_max - b.norm.de_min > 1e-9) || !(b.norm.pe_max - b.norm.pe_min > 1e-9))
    throw ConfigError("generate_dataset: degenerate scalar label range in training split");

  auto normalize = [](std::vector<TaskSample>& v, double lo, double hi) {
    for (auto& s : v) s.label = Tensor({1}, std::vector<double>{(s.raw_scalar - lo) / (hi - lo)});
  };
  for (SplitData* sp : {&b.train, &b.val, &b.test}) {
    normalize(sp->of(TaskId::DE), b.norm.de_min, b.norm.de_max);
    normalize(sp->of(TaskId::PE), b.norm.pe_min, b.norm.pe_max);
  }
  return b;
}

// --- serialization ----------------------------------------------------------------

static const char* kSplitNames[3] = {"train", "val", "test"};

static Shape stacked(Shape per_sample, int64_t n) {
  Shape d;
  d.push_back(n);
  d.insert(d.end(), per_sample.begin(), per_sample.end());
  return d;
}

static TensorArchive pack_split_task(const DatasetBundle& b, const std::vector<TaskSample>& v,
                                     TaskId t) {
  TensorArchive ar;
  int64_t n = int64_t(v.size());
  Shape in_d = task_input_dims(t, b.scenario, b.task_cfg);
  std::vector<double> in_flat;
  in_flat.reserve(size_t(n * shape_numel(in_d)));
  std::vector<int64_t> idx(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    const auto& s = v[i];
    if (s.input.shape() != in_d) throw ShapeError("pack: unexpected input dims");
    in_flat.insert(in_flat.end(), s.input.vec().begin(), s.input.vec().end());
    idx[i] = s.sample_index;
  }
  ar.add(NamedTensor::f32("input", stacked(in_d, n), in_flat.data()));
  ar.add(NamedTensor::i64("index", {n}, idx.data()));

  if (task_is_reconstruction(t)) {
    Shape lab_d = task_label_dims(t, b.scenario, b.task_cfg);
    std::vector<double> lab_flat;
    lab_flat.reserve(size_t(n * shape_numel(lab_d)));
    for (const auto& s : v) lab_flat.insert(lab_flat.end(), s.label.vec().begin(), s.label.vec().end());
    ar.add(NamedTensor::f32("label", stacked(lab_d, n), lab_flat.data()));
  } else if (t == TaskId::BF) {
    std::vector<int64_t> beams;
    std::vector<cdouble> mm;
    for (const auto& s : v) {
      beams.push_back(s.beam_index);
      mm.insert(mm.end(), s.aux_mm.begin(), s.aux_mm.end());
    }
    ar.add(NamedTensor::i64("label", {n}, beams.data()));
    ar.add(NamedTensor::c64("aux_mm", {n, b.scenario.subcarriers, b.scenario.mm_antennas}, mm.data()));
  } else {
    std::vector<double> lab, raw;
    for (const auto& s : v) {
      lab.push_back(s.label[0]);
      raw.push_back(s.raw_scalar);
    }
    ar.add(NamedTensor::f64("label", {n, 1}, lab.data()));
    ar.add(NamedTensor::f64("label_raw", {n}, raw.data()));
  }
  return ar;
}

void save_dataset(const DatasetBundle& b, const std::string& dir) {
  make_dirs(dir);
  json archives;
  const SplitData* splits[3] = {&b.train, &b.val, &b.test};
  for (int s = 0; s < 3; ++s)
    for (TaskId t : all_tasks()) {
      std::string name = std::string(task_name(t)) + "_" + kSplitNames[s] + ".wm4d";
      std::string bytes = pack_split_task(b, splits[s]->of(t), t).serialize();
      write_file(dir + "/" + name, bytes);
      archives[name] = hash_hex(fnv1a64(bytes));
    }

  json m;
  m["format"] = "wm4-dataset";
  m["version"] = 1;
  m["config"] = bundle_config_json(b);
  m["config_hash"] = hash_hex(b.config_hash());
  auto counts = b.split_counts();
  m["counts"] = {{"train", counts[0]}, {"val", counts[1]}, {"test", counts[2]}};
  m["norm"] = {{"de_min", b.norm.de_min},
               {"de_max", b.norm.de_max},
               {"pe_min", b.norm.pe_min},
               {"pe_max", b.norm.pe_max}};
  m["archives"] = archives;
  write_file(dir + "/manifest.json", m.dump(2) + "\n");
}

static std::vector<TaskSample> unpack_split_task(const TensorArchive& ar, TaskId t,
                                                 const DatasetBundle& b) {
  const NamedTensor& in = ar.get("input");
  const NamedTensor& idx = ar.get("index");
  Shape in_d = task_input_dims(t, b.scenario, b.task_cfg);
  if (in.dims.size() != in_d.size() + 1) throw IoError("dataset archive: bad input rank");
  int64_t n = in.dims[0];
  std::vector<double> in_flat = in.as_f64();
  std::vector<int64_t> indices = idx.as_i64();
  int64_t in_n = shape_numel(in_d);

  std::vector<TaskSample> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    TaskSample& s = out[size_t(i)];
    s.task = t;
    s.sample_index = indices[size_t(i)];
    s.input = Tensor(in_d, std::vector<double>(in_flat.begin() + i * in_n,
                                               in_flat.begin() + (i + 1) * in_n));
  }
  if (task_is_reconstruction(t)) {
    const NamedTensor& lab = ar.get("label");
    Shape lab_d = task_label_dims(t, b.scenario, b.task_cfg);
    std::vector<double> lab_flat = lab.as_f64();
    int64_t lab_n = shape_numel(lab_d);
    for (int64_t i = 0; i < n; ++i)
      out[size_t(i)].label = Tensor(lab_d, std::vector<double>(lab_flat.begin() + i * lab_n,
                                                               lab_flat.begin() + (i + 1) * lab_n));
  } else if (t == TaskId::BF) {
    std::vector<int64_t> beams = ar.get("label").as_i64();
    std::vector<cdouble> mm = ar.get("aux_mm").as_c64();
    int64_t per = int64_t(b.scenario.subcarriers) * b.scenario.mm_antennas;
    for (int64_t i = 0; i < n; ++i) {
      out[size_t(i)].beam_index = beams[size_t(i)];
      out[size_t(i)].aux_mm.assign(mm.begin() + i * per, mm.begin() + (i + 1) * per);
    }
  } else {
    std::vector<double> lab = ar.get("label").as_f64();
    std::vector<double> raw = ar.get("label_raw").as_f64();
    for (int64_t i = 0; i < n; ++i) {
      out[size_t(i)].label = Tensor({1}, std::vector<double>{lab[size_t(i)]});
      out[size_t(i)].raw_scalar = raw[size_t(i)];
    }
  }
  return out;
}

DatasetBundle load_dataset(const std::string& dir) {
  json m = json::parse(read_file(dir + "/manifest.json"));
  if (m.value("format", "") != "wm4-dataset") throw IoError("not a wm4 dataset: " + dir);

  DatasetBundle b;
  const json& cfg = m.at("config");
  b.scenario = scenario_from_json(cfg.at("scenario"));
  b.task_cfg = task_from_json(cfg.at("task"));
  b.n_total = cfg.at("n_total").get<int64_t>();
  auto fr = cfg.at("fractions");
  b.fractions = {fr[0].get<double>(), fr[1].get<double>(), fr[2].get<double>()};
  b.seed = cfg.at("seed").get<uint64_t>();
  const json& nm = m.at("norm");
  b.norm = {nm.at("de_min").get<double>(), nm.at("de_max").get<double>(),
            nm.at("pe_min").get<double>(), nm.at("pe_max").get<double>()};
  if (hash_hex(b.config_hash()) != m.at("config_hash").get<std::string>())
    throw IoError("dataset manifest: config hash mismatch");

  SplitData* splits[3] = {&b.train, &b.val, &b.test};
  for (int s = 0; s < 3; ++s)
    for (TaskId t : all_tasks()) {
      std::string name = std::string(task_name(t)) + "_" + kSplitNames[s] + ".wm4d";
      std::string bytes = read_file(dir + "/" + name);
      if (m.contains("archives") &&
          m.at("archives").value(name, "") != hash_hex(fnv1a64(bytes)))
        throw IoError("dataset archive modified since manifest was written: " + name);
      splits[s]->of(t) = unpack_split_task(TensorArchive::parse(bytes), t, b);
    }
  return b;
}

} // namespace wm4
