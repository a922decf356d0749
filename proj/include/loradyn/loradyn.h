/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface of the loradyn shared library.
 *
 * Every fallible call returns an ldyn_status; on failure a message for the
 * calling thread is available from ldyn_last_error() until the next call.
 * Handles are opaque and owned by the caller once created.
 */
#ifndef LORADYN_H
#define LORADYN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define LDYN_API __declspec(dllexport)
#else
#define LDYN_API __attribute__((visibility("default")))
#endif

typedef enum {
  LDYN_OK = 0,
  LDYN_E_INVALID = 1,
  LDYN_E_SHAPE = 2,
  LDYN_E_NONFINITE = 3,
  LDYN_E_IO = 4,
  LDYN_E_FORMAT = 5,
  LDYN_E_INCOMPATIBLE = 6,
  LDYN_E_BUFFER = 7, /* output buffer too small; the needed size is reported */
  LDYN_E_INTERNAL = 99
} ldyn_status;

LDYN_API const char* ldyn_last_error(void);
LDYN_API const char* ldyn_version(void);
LDYN_API const char* ldyn_status_name(ldyn_status s);

/* ---- width exponents ---------------------------------------------------- */

/* num/den in lowest terms with den > 0; neg_inf marks the exponent of zero. */
typedef struct {
  int64_t num;
  int64_t den;
  int neg_inf;
} ldyn_gamma;

LDYN_API ldyn_status ldyn_gamma_parse(const char* text, ldyn_gamma* out);
/* Writes "p/q", "p" or "-inf". */
LDYN_API ldyn_status ldyn_gamma_format(ldyn_gamma g, char* buf, size_t len);

typedef struct {
  ldyn_gamma a0, b0, eta_a, eta_b;
  ldyn_gamma d1, d2, d3, za, zb;
  int stable, bounded, efficient, internally_stable;
  int robust_in_eta_a, robust_in_eta_b;
} ldyn_regime;

LDYN_API ldyn_status ldyn_adam_regime(ldyn_gamma a0, ldyn_gamma b0, ldyn_gamma eta_a, ldyn_gamma eta_b,
                                      int require_internal, ldyn_regime* out);
/* out must hold `steps` entries; entry t-1 describes step t. */
LDYN_API ldyn_status ldyn_adam_trajectory(ldyn_gamma a0, ldyn_gamma b0, ldyn_gamma eta_a, ldyn_gamma eta_b,
                                          int steps, ldyn_regime* out);

typedef struct {
  int t;
  ldyn_gamma a_prev, b_prev, d1, d2, f;
  int stable, efficient;
} ldyn_sgd_step;

LDYN_API ldyn_status ldyn_sgd_regime(ldyn_gamma a0, ldyn_gamma b0, ldyn_gamma eta_a, ldyn_gamma eta_b, int steps,
                                     ldyn_sgd_step* out);

typedef struct {
  char name[32];
  int stable, efficient, robust;
  ldyn_regime report;
} ldyn_table_row;

/* Fills up to cap rows; *count receives the full row count. */
LDYN_API ldyn_status ldyn_scheme_table(ldyn_table_row* out, size_t cap, size_t* count);

/* ---- experiment configuration ------------------------------------------- */

typedef struct ldyn_config ldyn_config;

LDYN_API ldyn_status ldyn_config_new(ldyn_config** out);
LDYN_API void ldyn_config_free(ldyn_config* cfg);
LDYN_API ldyn_status ldyn_config_set(ldyn_config* cfg, const char* key, const char* value);
/* *needed (optional) receives the length including the terminator. */
LDYN_API ldyn_status ldyn_config_get(const ldyn_config* cfg, const char* key, char* buf, size_t len,
                                     size_t* needed);
/* Applies key=value lines from a file on top of the current values. */
LDYN_API ldyn_status ldyn_config_load_file(ldyn_config* cfg, const char* path);
/* Replaces the whole config with the one recorded in a manifest. */
LDYN_API ldyn_status ldyn_config_load_manifest(ldyn_config* cfg, const char* path);
LDYN_API ldyn_status ldyn_config_full_scale(ldyn_config* cfg);

typedef void (*ldyn_log_fn)(const char* line, void* user);

/* phase: "pretrain", "finetune", "grid" or "probe". Outputs go under the config's out key. */
LDYN_API ldyn_status ldyn_run_phase(const ldyn_config* cfg, const char* phase, ldyn_log_fn log, void* user);
LDYN_API ldyn_status ldyn_run_report(const char* const* dirs, size_t n_dirs, const char* out, ldyn_log_fn log,
                                     void* user);

/* ---- datasets ----------------------------------------------------------- */

typedef struct ldyn_dataset ldyn_dataset;

LDYN_API ldyn_status ldyn_dataset_load_idx(const char* images_path, const char* labels_path, ldyn_dataset** out);
LDYN_API ldyn_status ldyn_dataset_synthetic(uint64_t seed, size_t n_samples, size_t dim, ldyn_dataset** out);
LDYN_API void ldyn_dataset_free(ldyn_dataset* ds);
LDYN_API size_t ldyn_dataset_size(const ldyn_dataset* ds);
LDYN_API size_t ldyn_dataset_dim(const ldyn_dataset* ds);
LDYN_API ldyn_status ldyn_dataset_label(const ldyn_dataset* ds, size_t index, int* label);

/* ---- pretrained models -------------------------------------------------- */

typedef struct ldyn_model ldyn_model;

LDYN_API ldyn_status ldyn_model_load(const char* checkpoint_path, ldyn_model** out);
LDYN_API void ldyn_model_free(ldyn_model* m);
LDYN_API ldyn_status ldyn_model_dims(const ldyn_model* m, size_t* input_dim, size_t* width, size_t* classes);
/* Hash of the frozen weights (input, hidden and output matrices). */
LDYN_API ldyn_status ldyn_model_frozen_hash(const ldyn_model* m, uint64_t* out);
LDYN_API ldyn_status ldyn_model_evaluate(const ldyn_model* m, const ldyn_dataset* ds, double* loss,
                                         double* accuracy);

/* ---- width probes ------------------------------------------------------- */

typedef struct ldyn_probe ldyn_probe;

/* Runs the probe described by the config's probe keys. */
LDYN_API ldyn_status ldyn_probe_run(const ldyn_config* cfg, ldyn_probe** out);
LDYN_API void ldyn_probe_free(ldyn_probe* p);
LDYN_API size_t ldyn_probe_record_count(const ldyn_probe* p);
/* quantity: "za", "zb", "d1", "d2" or "d3". */
LDYN_API ldyn_status ldyn_probe_slope(const ldyn_probe* p, const char* quantity, int t, double* slope,
                                      double* r_squared);
/* Largest value of a quantity at step t over all widths and seeds. */
LDYN_API ldyn_status ldyn_probe_max(const ldyn_probe* p, const char* quantity, int t, double* out);

#ifdef __cplusplus
}
#endif

#endif /* LORADYN_H */
