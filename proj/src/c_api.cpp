// SPDX-License-Identifier: Apache-2.0
#include "loradyn/loradyn.h"

#include <algorithm>
#include <cstring>
#include <new>
#include <string>

#include "loradyn/error.hpp"
#include "loradyn/experiment.hpp"
#include "loradyn/gamma.hpp"

struct ldyn_config {
  loradyn::ExperimentConfig cfg;
};
struct ldyn_dataset {
  loradyn::Dataset ds;
};
struct ldyn_model {
  loradyn::ToyModel model;
};
struct ldyn_probe {
  std::vector<loradyn::ProbeRecord> records;
};

namespace {

using namespace loradyn;

thread_local std::string g_last_error;

ldyn_status set_error(ldyn_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs fn and maps any exception to a status code.
template <class F>
ldyn_status guarded(F&& fn) {
  g_last_error.clear();
  try {
    fn();
    return LDYN_OK;
  } catch (const Error& e) {
    return set_error(static_cast<ldyn_status>(static_cast<int>(e.code())), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(LDYN_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(LDYN_E_INTERNAL, e.what());
  } catch (...) {
    return set_error(LDYN_E_INTERNAL, "unknown error");
  }
}

void require(const void* p, const char* what) {
  if (!p) fail(ErrorCode::InvalidArgument, std::string(what) + " is null");
}

ldyn_gamma to_c(const Gamma& g) {
  ldyn_gamma c;
  c.num = g.num();
  c.den = g.den();
  c.neg_inf = g.is_neg_inf() ? 1 : 0;
  return c;
}

Gamma from_c(const ldyn_gamma& c) {
  if (c.neg_inf) return Gamma::neg_inf();
  if (c.den == 0) fail(ErrorCode::InvalidArgument, "exponent denominator is zero");
  return Gamma(c.num, c.den);
}

ldyn_regime to_c(const RegimeReport& r) {
  ldyn_regime c;
  c.a0 = to_c(r.a0);
  c.b0 = to_c(r.b0);
  c.eta_a = to_c(r.eta_a);
  c.eta_b = to_c(r.eta_b);
  c.d1 = to_c(r.d1);
  c.d2 = to_c(r.d2);
  c.d3 = to_c(r.d3);
  c.za = to_c(r.za);
  c.zb = to_c(r.zb);
  c.stable = r.stable;
  c.bounded = r.bounded;
  c.efficient = r.efficient;
  c.internally_stable = r.internally_stable;
  c.robust_in_eta_a = r.robust_in_eta_a;
  c.robust_in_eta_b = r.robust_in_eta_b;
  return c;
}

ldyn_status with_buffer(const std::string& s, char* buf, size_t len, size_t* needed) {
  g_last_error.clear();
  if (needed) *needed = s.size() + 1;
  if (!buf || len < s.size() + 1)
    return set_error(LDYN_E_BUFFER, "buffer of " + std::to_string(len) + " bytes cannot hold " +
                                        std::to_string(s.size() + 1));
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return LDYN_OK;
}

LogFn wrap_log(ldyn_log_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](const std::string& line) { fn(line.c_str(), user); };
}

Quantity parse_quantity(const char* q) {
  require(q, "quantity");
  const std::string s(q);
  for (Quantity k : {Quantity::ZA, Quantity::ZB, Quantity::D1, Quantity::D2, Quantity::D3})
    if (quantity_name(k) == s) return k;
  fail(ErrorCode::InvalidArgument, "unknown quantity '" + s + "' (za, zb, d1, d2, d3)");
}

}  // namespace

extern "C" {

const char* ldyn_last_error(void) { return g_last_error.c_str(); }
const char* ldyn_version(void) { return kArtifactVersion; }

const char* ldyn_status_name(ldyn_status s) {
  switch (s) {
    case LDYN_OK: return "ok";
    case LDYN_E_INVALID: return "invalid argument";
    case LDYN_E_SHAPE: return "shape mismatch";
    case LDYN_E_NONFINITE: return "non-finite value";
    case LDYN_E_IO: return "i/o error";
    case LDYN_E_FORMAT: return "format error";
    case LDYN_E_INCOMPATIBLE: return "incompatible inputs";
    case LDYN_E_BUFFER: return "buffer too small";
    case LDYN_E_INTERNAL: return "internal error";
  }
  return "unknown status";
}

ldyn_status ldyn_gamma_parse(const char* text, ldyn_gamma* out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    *out = to_c(Gamma::parse(text));
  });
}

ldyn_status ldyn_gamma_format(ldyn_gamma g, char* buf, size_t len) {
  std::string s;
  ldyn_status st = guarded([&] { s = from_c(g).str(); });
  if (st != LDYN_OK) return st;
  return with_buffer(s, buf, len, nullptr);
}

ldyn_status ldyn_adam_regime(ldyn_gamma a0, ldyn_gamma b0, ldyn_gamma eta_a, ldyn_gamma eta_b, int require_internal,
                             ldyn_regime* out) {
  return guarded([&] {
    require(out, "out");
    *out = to_c(adam_regime(from_c(a0), from_c(b0), from_c(eta_a), from_c(eta_b), require_internal != 0));
  });
}

ldyn_status ldyn_adam_trajectory(ldyn_gamma a0, ldyn_gamma b0, ldyn_gamma eta_a, ldyn_gamma eta_b, int steps,
                                 ldyn_regime* out) {
  return guarded([&] {
    require(out, "out");
    const auto traj = adam_trajectory(from_c(a0), from_c(b0), from_c(eta_a), from_c(eta_b), steps);
    for (std::size_t i = 0; i < traj.size(); ++i) out[i] = to_c(traj[i]);
  });
}

ldyn_status ldyn_sgd_regime(ldyn_gamma a0, ldyn_gamma b0, ldyn_gamma eta_a, ldyn_gamma eta_b, int steps,
                            ldyn_sgd_step* out) {
  return guarded([&] {
    require(out, "out");
    const auto rows = sgd_regime(from_c(a0), from_c(b0), from_c(eta_a), from_c(eta_b), steps);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const SgdStep& s = rows[i];
      out[i] = ldyn_sgd_step{s.t,         to_c(s.a_prev), to_c(s.b_prev), to_c(s.d1),
                             to_c(s.d2),  to_c(s.f),      s.stable,       s.efficient};
    }
  });
}

ldyn_status ldyn_scheme_table(ldyn_table_row* out, size_t cap, size_t* count) {
  return guarded([&] {
    const auto rows = classify_table(scheme_table_configs());
    if (count) *count = rows.size();
    if (cap > 0) require(out, "out");
    for (std::size_t i = 0; i < rows.size() && i < cap; ++i) {
      ldyn_table_row& r = out[i];
      std::memset(r.name, 0, sizeof r.name);
      std::strncpy(r.name, rows[i].name.c_str(), sizeof r.name - 1);
      r.stable = rows[i].stable;
      r.efficient = rows[i].efficient;
      r.robust = rows[i].robust;
      r.report = to_c(rows[i].report);
    }
  });
}

ldyn_status ldyn_config_new(ldyn_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new ldyn_config();
  });
}

void ldyn_config_free(ldyn_config* cfg) { delete cfg; }

ldyn_status ldyn_config_set(ldyn_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg, "config");
    require(key, "key");
    require(value, "value");
    apply_kv(cfg->cfg, {{key, value}});
  });
}

ldyn_status ldyn_config_get(const ldyn_config* cfg, const char* key, char* buf, size_t len, size_t* needed) {
  std::string value;
  ldyn_status st = guarded([&] {
    require(cfg, "config");
    require(key, "key");
    const KeyValues kv = to_kv(cfg->cfg);
    auto it = kv.find(key);
    if (it == kv.end()) fail(ErrorCode::InvalidArgument, std::string("unknown config key '") + key + "'");
    value = it->second;
  });
  if (st != LDYN_OK) return st;
  return with_buffer(value, buf, len, needed);
}

ldyn_status ldyn_config_load_file(ldyn_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "config");
    require(path, "path");
    apply_kv(cfg->cfg, load_kv_file(path));
  });
}

ldyn_status ldyn_config_load_manifest(ldyn_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "config");
    require(path, "path");
    cfg->cfg = config_from_manifest(path);
  });
}

ldyn_status ldyn_config_full_scale(ldyn_config* cfg) {
  return guarded([&] {
    require(cfg, "config");
    apply_full_scale(cfg->cfg);
  });
}

ldyn_status ldyn_run_phase(const ldyn_config* cfg, const char* phase, ldyn_log_fn log, void* user) {
  return guarded([&] {
    require(cfg, "config");
    require(phase, "phase");
    const std::string p(phase);
    const LogFn fn = wrap_log(log, user);
    if (p == "pretrain")
      run_pretrain_phase(cfg->cfg, fn);
    else if (p == "finetune")
      run_finetune_phase(cfg->cfg, fn);
    else if (p == "grid")
      run_grid_phase(cfg->cfg, fn);
    else if (p == "probe")
      run_probe_phase(cfg->cfg, fn);
    else
      fail(ErrorCode::InvalidArgument, "unknown phase '" + p + "' (pretrain, finetune, grid, probe)");
  });
}

ldyn_status ldyn_run_report(const char* const* dirs, size_t n_dirs, const char* out, ldyn_log_fn log, void* user) {
  return guarded([&] {
    require(out, "out");
    if (n_dirs > 0) require(dirs, "dirs");
    std::vector<std::string> d;
    for (size_t i = 0; i < n_dirs; ++i) {
      require(dirs[i], "directory");
      d.emplace_back(dirs[i]);
    }
    run_report_phase(d, out, wrap_log(log, user));
  });
}

ldyn_status ldyn_dataset_load_idx(const char* images_path, const char* labels_path, ldyn_dataset** out) {
  return guarded([&] {
    require(images_path, "images_path");
    require(labels_path, "labels_path");
    require(out, "out");
    *out = new ldyn_dataset{load_idx_dataset(images_path, labels_path, "idx", "")};
  });
}

ldyn_status ldyn_dataset_synthetic(uint64_t seed, size_t n_samples, size_t dim, ldyn_dataset** out) {
  return guarded([&] {
    require(out, "out");
    *out = new ldyn_dataset{synthetic_dataset(seed, n_samples, dim)};
  });
}

void ldyn_dataset_free(ldyn_dataset* ds) { delete ds; }
size_t ldyn_dataset_size(const ldyn_dataset* ds) { return ds ? ds->ds.size() : 0; }
size_t ldyn_dataset_dim(const ldyn_dataset* ds) { return ds ? ds->ds.dim() : 0; }

ldyn_status ldyn_dataset_label(const ldyn_dataset* ds, size_t index, int* label) {
  return guarded([&] {
    require(ds, "dataset");
    require(label, "label");
    if (index >= ds->ds.size())
      fail(ErrorCode::InvalidArgument,
           "index " + std::to_string(index) + " out of range for " + std::to_string(ds->ds.size()) + " samples");
    *label = ds->ds.labels[index];
  });
}

ldyn_status ldyn_model_load(const char* checkpoint_path, ldyn_model** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    *out = new ldyn_model{load_checkpoint(checkpoint_path)};
  });
}

void ldyn_model_free(ldyn_model* m) { delete m; }

ldyn_status ldyn_model_dims(const ldyn_model* m, size_t* input_dim, size_t* width, size_t* classes) {
  return guarded([&] {
    require(m, "model");
    if (input_dim) *input_dim = m->model.input_dim();
    if (width) *width = m->model.width();
    if (classes) *classes = m->model.classes();
  });
}

ldyn_status ldyn_model_frozen_hash(const ldyn_model* m, uint64_t* out) {
  return guarded([&] {
    require(m, "model");
    require(out, "out");
    *out = frozen_hash(m->model);
  });
}

ldyn_status ldyn_model_evaluate(const ldyn_model* m, const ldyn_dataset* ds, double* loss, double* accuracy) {
  return guarded([&] {
    require(m, "model");
    require(ds, "dataset");
    const Evaluation e = evaluate(m->model, ds->ds);
    if (loss) *loss = e.loss;
    if (accuracy) *accuracy = e.accuracy;
  });
}

ldyn_status ldyn_probe_run(const ldyn_config* cfg, ldyn_probe** out) {
  return guarded([&] {
    require(cfg, "config");
    require(out, "out");
    *out = new ldyn_probe{run_probe(probe_config(cfg->cfg))};
  });
}

void ldyn_probe_free(ldyn_probe* p) { delete p; }
size_t ldyn_probe_record_count(const ldyn_probe* p) { return p ? p->records.size() : 0; }

ldyn_status ldyn_probe_slope(const ldyn_probe* p, const char* quantity, int t, double* slope, double* r_squared) {
  return guarded([&] {
    require(p, "probe");
    const SlopeFit f = fit_slope(p->records, parse_quantity(quantity), t);
    if (slope) *slope = f.slope;
    if (r_squared) *r_squared = f.r_squared;
  });
}

ldyn_status ldyn_probe_max(const ldyn_probe* p, const char* quantity, int t, double* out) {
  return guarded([&] {
    require(p, "probe");
    require(out, "out");
    const Quantity q = parse_quantity(quantity);
    bool seen = false;
    double m = 0.0;
    for (const auto& r : p->records)
      if (r.t == t) {
        const double v = quantity_value(r, q);
        m = seen ? std::max(m, v) : v;
        seen = true;
      }
    if (!seen) fail(ErrorCode::InvalidArgument, "no probe records at t=" + std::to_string(t));
    *out = m;
  });
}

}  // extern "C"
