/* SPDX-License-Identifier: Apache-2.0 */
/* Exercises the shared library through its C header only. */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "loradyn/loradyn.h"

static int failures = 0;

#define EXPECT(cond)                                                      \
  do {                                                                    \
    if (!(cond)) {                                                        \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                         \
    }                                                                     \
  } while (0)

static ldyn_gamma g(const char* s) {
  ldyn_gamma out;
  if (ldyn_gamma_parse(s, &out) != LDYN_OK) {
    fprintf(stderr, "cannot parse %s: %s\n", s, ldyn_last_error());
    exit(2);
  }
  return out;
}

static int same(ldyn_gamma a, const char* s) {
  ldyn_gamma b = g(s);
  if (a.neg_inf || b.neg_inf) return a.neg_inf == b.neg_inf;
  return a.num == b.num && a.den == b.den;
}

static void count_lines(const char* line, void* user) {
  (void)line;
  ++*(int*)user;
}

static void test_gamma(void) {
  ldyn_gamma x;
  char buf[16];
  EXPECT(ldyn_gamma_parse("-2/4", &x) == LDYN_OK);
  EXPECT(x.num == -1 && x.den == 2 && !x.neg_inf);
  EXPECT(ldyn_gamma_format(x, buf, sizeof buf) == LDYN_OK && strcmp(buf, "-1/2") == 0);
  EXPECT(ldyn_gamma_format(x, buf, 2) == LDYN_E_BUFFER);
  EXPECT(ldyn_gamma_parse("abc", &x) == LDYN_E_INVALID);
  EXPECT(strlen(ldyn_last_error()) > 0);
  EXPECT(ldyn_gamma_parse("-inf", &x) == LDYN_OK && x.neg_inf);
}

static void test_regimes(void) {
  ldyn_regime r;
  EXPECT(ldyn_adam_regime(g("-1"), g("-inf"), g("-1/2"), g("-1/2"), 0, &r) == LDYN_OK);
  EXPECT(r.efficient && r.stable);
  EXPECT(same(r.d1, "0") && same(r.d2, "0") && same(r.zb, "0"));

  EXPECT(ldyn_adam_regime(g("-1/2"), g("-1/2"), g("-1"), g("-1"), 0, &r) == LDYN_OK);
  EXPECT(same(r.d1, "-1/2") && same(r.d2, "-1/2") && same(r.zb, "0"));
  EXPECT(r.robust_in_eta_a && r.robust_in_eta_b);

  EXPECT(ldyn_adam_regime(g("-1"), g("0"), g("-1"), g("0"), 1, &r) == LDYN_OK);
  EXPECT(r.internally_stable && r.efficient);

  ldyn_regime traj[3];
  EXPECT(ldyn_adam_trajectory(g("-1"), g("-inf"), g("-1/2"), g("-1/2"), 3, traj) == LDYN_OK);
  EXPECT(traj[0].d1.neg_inf);

  ldyn_sgd_step steps[10];
  EXPECT(ldyn_sgd_regime(g("-3/4"), g("-1/4"), g("-1/2"), g("-1/2"), 10, steps) == LDYN_OK);
  for (int t = 0; t < 10; ++t) EXPECT(same(steps[t].d1, "0") && same(steps[t].d2, "0") && same(steps[t].f, "0"));
  EXPECT(ldyn_sgd_regime(g("-inf"), g("-inf"), g("-1/2"), g("-1/2"), 3, steps) == LDYN_E_INVALID);

  size_t count = 0;
  EXPECT(ldyn_scheme_table(NULL, 0, &count) == LDYN_OK);
  EXPECT(count == 3);
  ldyn_table_row rows[3];
  EXPECT(ldyn_scheme_table(rows, 3, &count) == LDYN_OK);
  int robust = 0;
  for (size_t i = 0; i < count; ++i) robust += rows[i].robust;
  EXPECT(robust == 1);
}

static void test_config(void) {
  ldyn_config* cfg = NULL;
  char buf[64];
  size_t needed = 0;
  EXPECT(ldyn_config_new(&cfg) == LDYN_OK);
  EXPECT(ldyn_config_set(cfg, "n", "48") == LDYN_OK);
  EXPECT(ldyn_config_get(cfg, "n", buf, sizeof buf, &needed) == LDYN_OK && strcmp(buf, "48") == 0);
  EXPECT(needed == 3);
  EXPECT(ldyn_config_get(cfg, "n", buf, 2, &needed) == LDYN_E_BUFFER && needed == 3);
  EXPECT(ldyn_config_set(cfg, "no_such_key", "1") == LDYN_E_INVALID);
  EXPECT(strstr(ldyn_last_error(), "no_such_key") != NULL);
  EXPECT(ldyn_config_load_file(cfg, "/nonexistent/loradyn.cfg") == LDYN_E_IO);
  EXPECT(ldyn_config_full_scale(cfg) == LDYN_OK);
  EXPECT(ldyn_config_get(cfg, "n", buf, sizeof buf, NULL) == LDYN_OK && strcmp(buf, "4096") == 0);
  ldyn_config_free(cfg);
}

static void test_probe(void) {
  ldyn_config* cfg = NULL;
  ldyn_probe* p = NULL;
  double slope = 0, r2 = 0, mx = 0;
  EXPECT(ldyn_config_new(&cfg) == LDYN_OK);
  EXPECT(ldyn_config_set(cfg, "widths", "64,128,256") == LDYN_OK);
  EXPECT(ldyn_config_set(cfg, "probe_seeds", "2") == LDYN_OK);
  EXPECT(ldyn_config_set(cfg, "probe_steps", "3") == LDYN_OK);
  EXPECT(ldyn_probe_run(cfg, &p) == LDYN_OK);
  EXPECT(ldyn_probe_record_count(p) == 3 * 2 * 4);
  EXPECT(ldyn_probe_slope(p, "zb", 3, &slope, &r2) == LDYN_OK);
  EXPECT(slope > -0.5 && slope < 0.5);
  EXPECT(ldyn_probe_max(p, "zb", 0, &mx) == LDYN_OK && mx == 0.0);
  EXPECT(ldyn_probe_slope(p, "zz", 3, &slope, &r2) == LDYN_E_INVALID);
  ldyn_probe_free(p);
  ldyn_config_free(cfg);
}

static void test_pipeline(const char* dir) {
  ldyn_config* cfg = NULL;
  char path[1024];
  int lines = 0;
  EXPECT(ldyn_config_new(&cfg) == LDYN_OK);
  const char* kv[][2] = {{"synthetic", "true"}, {"d", "16"},          {"n", "32"},
                         {"r", "2"},            {"synthetic_train", "300"}, {"synthetic_test", "100"},
                         {"pretrain_steps", "60"}, {"finetune_steps", "3"}, {"seeds", "1"},
                         {"lrs", "0.001"},      {"init_sizes", "1"},   {"out", dir}};
  for (size_t i = 0; i < sizeof kv / sizeof kv[0]; ++i) EXPECT(ldyn_config_set(cfg, kv[i][0], kv[i][1]) == LDYN_OK);
  EXPECT(ldyn_run_phase(cfg, "grid", count_lines, &lines) == LDYN_OK);
  EXPECT(lines > 0);
  EXPECT(ldyn_run_phase(cfg, "dance", NULL, NULL) == LDYN_E_INVALID);

  snprintf(path, sizeof path, "%s/pretrained.ckpt", dir);
  ldyn_model* m = NULL;
  size_t d = 0, n = 0, k = 0;
  uint64_t h1 = 0, h2 = 0;
  EXPECT(ldyn_model_load(path, &m) == LDYN_OK);
  EXPECT(ldyn_model_dims(m, &d, &n, &k) == LDYN_OK && d == 16 && n == 32 && k == 10);
  EXPECT(ldyn_model_frozen_hash(m, &h1) == LDYN_OK);

  ldyn_dataset* ds = NULL;
  double loss = 0, acc = 0;
  int label = -1;
  EXPECT(ldyn_dataset_synthetic(5, 50, 16, &ds) == LDYN_OK);
  EXPECT(ldyn_dataset_size(ds) == 50 && ldyn_dataset_dim(ds) == 16);
  EXPECT(ldyn_dataset_label(ds, 0, &label) == LDYN_OK && label >= 0 && label < 10);
  EXPECT(ldyn_dataset_label(ds, 50, &label) == LDYN_E_INVALID);
  EXPECT(ldyn_model_evaluate(m, ds, &loss, &acc) == LDYN_OK && loss > 0 && acc >= 0 && acc <= 1);
  EXPECT(ldyn_model_frozen_hash(m, &h2) == LDYN_OK && h1 == h2);
  ldyn_dataset_free(ds);
  EXPECT(ldyn_dataset_synthetic(5, 50, 8, &ds) == LDYN_OK);
  EXPECT(ldyn_model_evaluate(m, ds, &loss, &acc) == LDYN_E_SHAPE);
  ldyn_dataset_free(ds);
  ldyn_model_free(m);

  snprintf(path, sizeof path, "%s/manifest.json", dir);
  ldyn_config* again = NULL;
  char buf[32];
  EXPECT(ldyn_config_new(&again) == LDYN_OK);
  EXPECT(ldyn_config_load_manifest(again, path) == LDYN_OK);
  EXPECT(ldyn_config_get(again, "n", buf, sizeof buf, NULL) == LDYN_OK && strcmp(buf, "32") == 0);
  ldyn_config_free(again);

  const char* dirs[] = {dir};
  char report[1024];
  snprintf(report, sizeof report, "%s/report", dir);
  EXPECT(ldyn_run_report(dirs, 1, report, NULL, NULL) == LDYN_OK);
  EXPECT(ldyn_model_load("/nonexistent.ckpt", &m) == LDYN_E_IO);
  ldyn_config_free(cfg);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    fprintf(stderr, "usage: %s SCRATCH_DIR\n", argv[0]);
    return 2;
  }
  EXPECT(strlen(ldyn_version()) > 0);
  EXPECT(strcmp(ldyn_status_name(LDYN_E_SHAPE), "shape mismatch") == 0);
  test_gamma();
  test_regimes();
  test_config();
  test_probe();
  test_pipeline(argv[1]);
  if (failures) {
    fprintf(stderr, "%d expectation(s) failed\n", failures);
    return 1;
  }
  printf("c api: all expectations met\n");
  return 0;
}
