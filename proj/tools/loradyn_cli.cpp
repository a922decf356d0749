// SPDX-License-Identifier: Apache-2.0
//
// loradyn command line. Everything goes through the C interface.
#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "loradyn/loradyn.h"

namespace {

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(ldyn_status s) {
  if (s != LDYN_OK) throw CliError(std::string(ldyn_status_name(s)) + ": " + ldyn_last_error());
}

ldyn_gamma parse_gamma(const std::string& text) {
  ldyn_gamma g;
  check(ldyn_gamma_parse(text.c_str(), &g));
  return g;
}

std::string fmt(ldyn_gamma g) {
  char buf[64];
  check(ldyn_gamma_format(g, buf, sizeof buf));
  return buf;
}

const char* mark(int b) { return b ? "\xE2\x9C\x93" : "\xE2\x9C\x97"; }

// ---------------------------------------------------------------- gamma

struct GammaArgs {
  std::string opt = "adam";
  std::string a0 = "-1", b0 = "-inf", eta = "-1/2", eta_a, eta_b;
  int steps = 0;
  bool scheme_table = false, require_internal = false;
  std::string csv;
};

std::string regime_header() {
  return "a0,b0,eta_a,eta_b,d1,d2,d3,za,zb,stable,efficient,internally_stable,robust_eta_a,robust_eta_b";
}

std::string regime_row(const ldyn_regime& r) {
  return fmt(r.a0) + "," + fmt(r.b0) + "," + fmt(r.eta_a) + "," + fmt(r.eta_b) + "," + fmt(r.d1) + "," + fmt(r.d2) +
         "," + fmt(r.d3) + "," + fmt(r.za) + "," + fmt(r.zb) + "," + std::to_string(r.stable) + "," +
         std::to_string(r.efficient) + "," + std::to_string(r.internally_stable) + "," +
         std::to_string(r.robust_in_eta_a) + "," + std::to_string(r.robust_in_eta_b);
}

void emit_csv(const std::string& path, const std::string& text) {
  if (path.empty()) return;
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw CliError("cannot write '" + path + "'");
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

int run_gamma(const GammaArgs& g) {
  if (g.scheme_table) {
    size_t count = 0;
    check(ldyn_scheme_table(nullptr, 0, &count));
    std::vector<ldyn_table_row> rows(count);
    check(ldyn_scheme_table(rows.data(), rows.size(), &count));
    std::printf("%-10s %-8s %-10s %-8s\n", "scheme", "stable", "efficient", "robust");
    std::string csv = "scheme,stable,efficient,robust," + regime_header() + "\n";
    for (const auto& r : rows) {
      // The marks are one column wide but three bytes long, so pad by hand.
      std::printf("%-10s %s        %s          %s\n", r.name, mark(r.stable), mark(r.efficient), mark(r.robust));
      csv += std::string(r.name) + "," + std::to_string(r.stable) + "," + std::to_string(r.efficient) + "," +
             std::to_string(r.robust) + "," + regime_row(r.report) + "\n";
    }
    emit_csv(g.csv, csv);
    return 0;
  }
  const ldyn_gamma a0 = parse_gamma(g.a0), b0 = parse_gamma(g.b0);
  const ldyn_gamma ea = parse_gamma(g.eta_a.empty() ? g.eta : g.eta_a);
  const ldyn_gamma eb = parse_gamma(g.eta_b.empty() ? g.eta : g.eta_b);
  if (g.opt == "adam") {
    ldyn_regime r;
    check(ldyn_adam_regime(a0, b0, ea, eb, g.require_internal, &r));
    std::printf("adam  a0=%s b0=%s eta_a=%s eta_b=%s\n", fmt(a0).c_str(), fmt(b0).c_str(), fmt(ea).c_str(),
                fmt(eb).c_str());
    std::printf("d1=%s d2=%s d3=%s zA=%s zB=%s\n", fmt(r.d1).c_str(), fmt(r.d2).c_str(), fmt(r.d3).c_str(),
                fmt(r.za).c_str(), fmt(r.zb).c_str());
    std::printf("stable %s efficient %s robust %s internally-stable %s\n", mark(r.stable), mark(r.efficient),
                mark(r.robust_in_eta_a && r.robust_in_eta_b), mark(r.internally_stable));
    std::string csv = "kind,t," + regime_header() + "\nclosed,," + regime_row(r) + "\n";
    if (g.steps > 0) {
      std::vector<ldyn_regime> traj(static_cast<size_t>(g.steps));
      check(ldyn_adam_trajectory(a0, b0, ea, eb, g.steps, traj.data()));
      for (int t = 1; t <= g.steps; ++t) {
        const ldyn_regime& s = traj[static_cast<size_t>(t - 1)];
        std::printf("t=%-3d d1=%-6s d2=%-6s zA=%-6s zB=%-6s efficient %s\n", t, fmt(s.d1).c_str(), fmt(s.d2).c_str(),
                    fmt(s.za).c_str(), fmt(s.zb).c_str(), mark(s.efficient));
        csv += "step," + std::to_string(t) + "," + regime_row(s) + "\n";
      }
    }
    std::printf("%s", csv.c_str());
    emit_csv(g.csv, csv);
    return 0;
  }
  if (g.opt == "sgd") {
    const int steps = g.steps > 0 ? g.steps : 5;
    std::vector<ldyn_sgd_step> rows(static_cast<size_t>(steps));
    check(ldyn_sgd_regime(a0, b0, ea, eb, steps, rows.data()));
    std::printf("sgd  a0=%s b0=%s eta_a=%s eta_b=%s\n", fmt(a0).c_str(), fmt(b0).c_str(), fmt(ea).c_str(),
                fmt(eb).c_str());
    std::string csv = "t,a_prev,b_prev,d1,d2,f,stable,efficient\n";
    bool all = true;
    for (const auto& s : rows) {
      std::printf("t=%-3d a=%-6s b=%-6s d1=%-6s d2=%-6s f=%-6s stable %s efficient %s\n", s.t, fmt(s.a_prev).c_str(),
                  fmt(s.b_prev).c_str(), fmt(s.d1).c_str(), fmt(s.d2).c_str(), fmt(s.f).c_str(), mark(s.stable),
                  mark(s.efficient));
      csv += std::to_string(s.t) + "," + fmt(s.a_prev) + "," + fmt(s.b_prev) + "," + fmt(s.d1) + "," + fmt(s.d2) +
             "," + fmt(s.f) + "," + std::to_string(s.stable) + "," + std::to_string(s.efficient) + "\n";
      if (s.t >= 2) all = all && s.efficient;
    }
    std::printf("%s\n", all ? "all steps t>=2 efficient" : "not efficient at every step t>=2");
    std::printf("%s", csv.c_str());
    emit_csv(g.csv, csv);
    return 0;
  }
  throw CliError("unknown optimizer '" + g.opt + "' (adam, sgd)");
}

// ---------------------------------------------------------------- experiment phases

struct RunArgs {
  std::string config_file, manifest, out, checkpoint;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads, seeds, steps;
  std::optional<std::size_t> n;
  std::string lrs, init_sizes, schemes;
  bool full_scale = false, synthetic = false;
  // probe
  std::string eta, scheme, opt, a0, b0, widths, compare;
};

struct Config {
  ldyn_config* h = nullptr;
  Config() { check(ldyn_config_new(&h)); }
  ~Config() { ldyn_config_free(h); }
  Config(const Config&) = delete;
  Config& operator=(const Config&) = delete;
  void set(const std::string& k, const std::string& v) { check(ldyn_config_set(h, k.c_str(), v.c_str())); }
  std::string get(const std::string& k) const {
    size_t need = 0;
    ldyn_config_get(h, k.c_str(), nullptr, 0, &need);
    std::string buf(need, '\0');
    check(ldyn_config_get(h, k.c_str(), buf.data(), buf.size(), &need));
    buf.resize(need - 1);
    return buf;
  }
};

void print_line(const char* line, void*) {
  std::printf("%s\n", line);
  std::fflush(stdout);
}

// Order: defaults, manifest, full scale, config file, flags.
void build_config(Config& c, const RunArgs& a, const std::string& phase) {
  if (!a.manifest.empty()) check(ldyn_config_load_manifest(c.h, a.manifest.c_str()));
  if (a.full_scale) check(ldyn_config_full_scale(c.h));
  if (!a.config_file.empty()) check(ldyn_config_load_file(c.h, a.config_file.c_str()));
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw CliError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.synthetic) c.set("synthetic", "true");
  if (a.seed) c.set("seed", std::to_string(*a.seed));
  if (a.threads) c.set("threads", std::to_string(*a.threads));
  if (a.n) c.set("n", std::to_string(*a.n));
  if (!a.checkpoint.empty()) c.set("checkpoint", a.checkpoint);
  if (!a.lrs.empty()) c.set("lrs", a.lrs);
  if (!a.init_sizes.empty()) c.set("init_sizes", a.init_sizes);
  if (!a.schemes.empty()) c.set("schemes", a.schemes);
  if (phase == "probe") {
    if (a.seeds) c.set("probe_seeds", std::to_string(*a.seeds));
    if (a.steps) c.set("probe_steps", std::to_string(*a.steps));
    if (!a.eta.empty()) c.set("eta", a.eta);
    if (!a.scheme.empty()) c.set("probe_scheme", a.scheme);
    if (!a.opt.empty()) c.set("probe_optimizer", a.opt);
    if (!a.a0.empty()) c.set("a0", a.a0);
    if (!a.b0.empty()) c.set("b0", a.b0);
    if (!a.widths.empty()) c.set("widths", a.widths);
  } else {
    if (a.seeds) c.set("seeds", std::to_string(*a.seeds));
    if (a.steps) c.set(phase == "pretrain" ? "pretrain_steps" : "finetune_steps", std::to_string(*a.steps));
  }
  std::string out = a.out.empty() ? c.get("out") : a.out;
  if (a.out.empty() && a.manifest.empty() && a.config_file.empty()) out = "results/" + phase;
  // The environment only relocates relative output directories.
  if (const char* root = std::getenv("LORADYN_OUT"); root && *root && std::filesystem::path(out).is_relative())
    out = (std::filesystem::path(root) / out).string();
  c.set("out", out);
  c.set("phase", phase);
}

int run_phase(const RunArgs& a, const std::string& phase) {
  Config c;
  build_config(c, a, phase);
  check(ldyn_run_phase(c.h, phase.c_str(), print_line, nullptr));
  if (phase == "probe" && !a.compare.empty()) {
    // Same probe under a second scheme, written next to the first.
    Config other;
    build_config(other, a, phase);
    other.set("probe_scheme", a.compare);
    other.set("a0", "");
    other.set("b0", "");
    other.set("out", (std::filesystem::path(c.get("out")) / a.compare).string());
    std::printf("comparison scheme %s\n", a.compare.c_str());
    check(ldyn_run_phase(other.h, "probe", print_line, nullptr));
  }
  std::printf("outputs in %s\n", c.get("out").c_str());
  return 0;
}

void add_run_options(CLI::App* sub, RunArgs& a) {
  sub->add_option("--config", a.config_file, "key=value config file");
  sub->add_option("--manifest", a.manifest, "re-run the config recorded in a manifest.json");
  sub->add_option("--set", a.sets, "override one config key (key=value), repeatable");
  sub->add_option("--out", a.out, "output directory (relative paths resolve under $LORADYN_OUT)");
  sub->add_option("--seed", a.seed, "master seed");
  sub->add_option("--threads", a.threads, "worker threads");
  sub->add_option("--seeds", a.seeds, "replicate seeds");
  sub->add_option("--steps", a.steps, "training steps of this phase");
  sub->add_flag("--full-scale,--paper-scale", a.full_scale, "full-size protocol (n=4096, 10 seeds, long grids)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LoRA fine-tuning dynamics lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ldyn_version()));

  GammaArgs ga;
  auto* gamma = app.add_subcommand("gamma", "solve the width-exponent system for one configuration");
  gamma->add_option("--opt", ga.opt, "adam or sgd")->check(CLI::IsMember({"adam", "sgd"}));
  gamma->add_option("--a0", ga.a0, "exponent of A at init (p/q or -inf)");
  gamma->add_option("--b0", ga.b0, "exponent of B at init (p/q or -inf)");
  gamma->add_option("--eta", ga.eta, "learning-rate exponent for both matrices");
  gamma->add_option("--eta-a", ga.eta_a, "learning-rate exponent for A");
  gamma->add_option("--eta-b", ga.eta_b, "learning-rate exponent for B");
  gamma->add_option("--steps", ga.steps, "step-resolved rows to print");
  gamma->add_flag("--scheme-table,--table1", ga.scheme_table, "print the initialization-scheme matrix");
  gamma->add_flag("--require-internal", ga.require_internal, "efficiency also requires zA = 0");
  gamma->add_option("--csv", ga.csv, "also write the machine rows to this file");

  RunArgs pa, fa, gr, pr;
  auto* pretrain = app.add_subcommand("pretrain", "train the frozen base model and write a checkpoint");
  add_run_options(pretrain, pa);
  pretrain->add_flag("--synthetic", pa.synthetic, "use the built-in synthetic tasks instead of IDX files");
  pretrain->add_option("--n", pa.n, "hidden width");

  auto* finetune = app.add_subcommand("finetune", "fine-tune one lattice cell per seed");
  add_run_options(finetune, fa);
  finetune->add_flag("--synthetic", fa.synthetic, "use the built-in synthetic tasks instead of IDX files");
  finetune->add_option("--checkpoint", fa.checkpoint, "pretrained checkpoint");
  finetune->add_option("--n", fa.n, "hidden width");
  finetune->add_option("--schemes", fa.schemes, "scheme (first entry used)");
  finetune->add_option("--lrs", fa.lrs, "learning rate (first entry used)");
  finetune->add_option("--init-sizes", fa.init_sizes, "init size (first entry used)");

  auto* grid = app.add_subcommand("grid", "run the scheme x lr x init-size x seed lattice");
  add_run_options(grid, gr);
  grid->add_flag("--synthetic", gr.synthetic, "use the built-in synthetic tasks instead of IDX files");
  grid->add_option("--checkpoint", gr.checkpoint, "pretrained checkpoint");
  grid->add_option("--n", gr.n, "hidden width");
  grid->add_option("--schemes", gr.schemes, "comma-separated schemes");
  grid->add_option("--lrs", gr.lrs, "comma-separated learning rates");
  grid->add_option("--init-sizes", gr.init_sizes, "comma-separated init sizes");

  auto* probe = app.add_subcommand("probe", "measure width-scaling slopes and compare with theory");
  add_run_options(probe, pr);
  probe->add_option("--eta", pr.eta, "learning-rate exponent");
  probe->add_option("--scheme", pr.scheme, "init_a, init_b, init_ab or init_ab_plus");
  probe->add_option("--opt", pr.opt, "adam or sgd");
  probe->add_option("--a0", pr.a0, "override the exponent of A at init");
  probe->add_option("--b0", pr.b0, "override the exponent of B at init");
  probe->add_option("--widths", pr.widths, "comma-separated widths");
  probe->add_option("--compare", pr.compare, "also probe this scheme into <out>/<scheme>");

  std::vector<std::string> report_dirs;
  std::string report_out = "report";
  auto* report = app.add_subcommand("report", "merge grid results from several run directories");
  report->add_option("dirs", report_dirs, "run directories containing manifest.json")->required();
  report->add_option("--out", report_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gamma) return run_gamma(ga);
    if (*pretrain) return run_phase(pa, "pretrain");
    if (*finetune) return run_phase(fa, "finetune");
    if (*grid) return run_phase(gr, "grid");
    if (*probe) return run_phase(pr, "probe");
    if (*report) {
      std::vector<const char*> dirs;
      for (const auto& d : report_dirs) dirs.push_back(d.c_str());
      std::string out = report_out;
      if (const char* root = std::getenv("LORADYN_OUT"); root && *root && std::filesystem::path(out).is_relative())
        out = (std::filesystem::path(root) / out).string();
      check(ldyn_run_report(dirs.data(), dirs.size(), out.c_str(), print_line, nullptr));
      std::printf("outputs in %s\n", out.c_str());
      return 0;
    }
  } catch (const CliError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
