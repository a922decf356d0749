// SPDX-License-Identifier: Apache-2.0
#include "loradyn/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "loradyn/csv.hpp"
#include "loradyn/error.hpp"
#include "parallel.hpp"

namespace loradyn {

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  fail(ErrorCode::InvalidArgument, "unknown optimizer '" + s + "' (adam, sgd)");
}

std::pair<Gamma, Gamma> scheme_exponents(InitKind k) {
  switch (k) {
    case InitKind::A: return {Gamma(-1), Gamma::neg_inf()};
    case InitKind::B: return {Gamma::neg_inf(), Gamma(0)};
    case InitKind::AB:
    case InitKind::ABPlus: return {Gamma(-1, 2), Gamma(-1, 2)};
  }
  return {Gamma(), Gamma()};
}

Gamma probe_a0(const ProbeConfig& cfg) { return cfg.a0 ? *cfg.a0 : scheme_exponents(cfg.scheme).first; }
Gamma probe_b0(const ProbeConfig& cfg) { return cfg.b0 ? *cfg.b0 : scheme_exponents(cfg.scheme).second; }

double probe_std_a(Gamma a0, double n) {
  return a0.is_neg_inf() ? 0.0 : std::pow(n, a0.to_double() + 0.5);
}

double probe_std_b(Gamma b0, double n) { return b0.is_neg_inf() ? 0.0 : std::pow(n, b0.to_double()); }

void validate(const ProbeConfig& cfg) {
  std::vector<std::size_t> w = cfg.widths;
  std::sort(w.begin(), w.end());
  w.erase(std::unique(w.begin(), w.end()), w.end());
  if (w.size() < 3) fail(ErrorCode::InvalidArgument, "probe needs at least 3 distinct widths");
  if (static_cast<double>(w.back()) < 4.0 * static_cast<double>(w.front()))
    fail(ErrorCode::InvalidArgument, "probe widths must span at least 2 octaves");
  if (cfg.steps < 2) fail(ErrorCode::InvalidArgument, "probe needs at least 2 steps (t=1 is excluded from the definitions)");
  if (cfg.seeds < 1) fail(ErrorCode::InvalidArgument, "probe needs at least one seed");
  if (cfg.rank == 0) fail(ErrorCode::InvalidArgument, "rank must be positive");
  const std::size_t smallest_out = cfg.out_dim ? cfg.out_dim : w.front();
  if (4 * cfg.rank > std::min(smallest_out, w.front()))
    fail(ErrorCode::InvalidArgument, "rank " + std::to_string(cfg.rank) + " exceeds a quarter of the layer size " +
                                         std::to_string(std::min(smallest_out, w.front())));
  const Gamma a0 = probe_a0(cfg), b0 = probe_b0(cfg);
  if (a0.is_neg_inf() && b0.is_neg_inf())
    fail(ErrorCode::InvalidArgument, "both A0 and B0 are zero: the adapter cannot train");
  if (cfg.scheme == InitKind::A && !b0.is_neg_inf())
    fail(ErrorCode::InvalidArgument, "init_a requires B0 = 0 (b0 = -inf)");
  if (cfg.scheme == InitKind::B && !a0.is_neg_inf())
    fail(ErrorCode::InvalidArgument, "init_b requires A0 = 0 (a0 = -inf)");
  if (!(cfg.target_scale > 0.0)) fail(ErrorCode::InvalidArgument, "target_scale must be positive");
  realize_lr(cfg.lr, 1.0);  // validates the rate spec
}

RegimeReport predicted_regime(const ProbeConfig& cfg, int t, bool step_resolved) {
  if (t < 1) fail(ErrorCode::InvalidArgument, "predicted_regime: t must be >= 1");
  const Gamma a0 = probe_a0(cfg), b0 = probe_b0(cfg);
  const Gamma eta_b = cfg.lr.exponent;
  const Gamma eta_a = cfg.lr.exponent;
  if (cfg.optimizer == OptimizerKind::Adam) {
    if (!step_resolved) return adam_regime(a0, b0, eta_a, eta_b);
    return adam_trajectory(a0, b0, eta_a, eta_b, t)[static_cast<std::size_t>(t - 1)];
  }
  const std::vector<SgdStep> steps = sgd_regime(a0, b0, eta_a, eta_b, t + 1);
  const SgdStep& cur = steps[static_cast<std::size_t>(t - 1)];
  const SgdStep& next = steps[static_cast<std::size_t>(t)];
  RegimeReport r;
  r.a0 = a0;
  r.b0 = b0;
  r.eta_a = eta_a;
  r.eta_b = eta_b;
  r.d1 = cur.d1;
  r.d2 = cur.d2;
  // change of a is eta_A + b, change of b is eta_B + a + 1; their product meets one width contraction
  r.d3 = gmul(gmul(gmul(eta_a, cur.b_prev), gmul(gmul(eta_b, cur.a_prev), Gamma(1))), Gamma(1));
  r.zb = next.f;
  r.za = gmul(next.a_prev, Gamma(1));
  r.stable = r.zb == Gamma(0);
  r.bounded = r.zb <= Gamma(0);
  r.internally_stable = r.za == Gamma(0);
  r.efficient = r.stable && r.d1 == Gamma(0) && r.d2 == Gamma(0);
  return r;
}

namespace {

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

std::vector<ProbeRecord> run_cell(const ProbeConfig& cfg, std::size_t n, int seed) {
  Rng rng = Rng::child(cfg.master_seed, (static_cast<std::uint64_t>(n) << 32) | static_cast<std::uint32_t>(seed));
  const std::size_t n1 = cfg.out_dim ? cfg.out_dim : n;
  const double nd = static_cast<double>(n);
  const Gamma a0 = probe_a0(cfg), b0 = probe_b0(cfg);

  LoraLayer L;
  L.W = gaussian(n1, n, 1.0 / std::sqrt(nd), rng);
  const Matrix z = gaussian(n, 1, 1.0, rng);
  const Matrix y = gaussian(n1, 1, cfg.target_scale, rng);
  L.A = gaussian(cfg.rank, n, probe_std_a(a0, nd), rng);
  L.B = gaussian(n1, cfg.rank, probe_std_b(b0, nd), rng);
  L.s = cfg.s;
  if (cfg.scheme == InitKind::AB) {
    L.subtract_init = true;
    L.A0 = L.A;
    L.B0 = L.B;
  }
  const Matrix start_a = L.A, start_b = L.B;
  const Matrix wz = matmul(L.W, z);
  const RealizedLr lr = realize_lr(cfg.lr, nd);

  auto zb_of = [&](const Matrix& a, const Matrix& b) {
    Matrix v = matmul(b, matmul(a, z));
    v *= L.s;
    return v;
  };

  std::vector<ProbeRecord> out;
  ProbeRecord r0;
  r0.n = n;
  r0.seed = seed;
  r0.t = 0;
  r0.rms_za = rms(matmul(L.A, z));
  Matrix zb_prev = zb_of(L.A, L.B);
  r0.rms_zb = rms(zb_prev);
  out.push_back(r0);

  AdamState sa, sb;
  for (int t = 1; t <= cfg.steps; ++t) {
    LoraForward f = forward_lora(L, z, &wz);
    Matrix dz = f.zbar - y;  // gradient of 0.5*||zbar - y||^2
    LoraGrads g = backward_lora(L, z, f.za, dz);
    ProbeRecord rec;
    rec.n = n;
    rec.seed = seed;
    rec.t = t;
    if (!all_finite(g.ga) || !all_finite(g.gb)) {
      rec.diverged = true;
      rec.rms_za = rec.rms_zb = rec.rms_d1 = rec.rms_d2 = rec.rms_d3 = std::numeric_limits<double>::quiet_NaN();
      out.push_back(rec);
      break;
    }
    const Matrix a_prev = L.A, b_prev = L.B;
    if (cfg.optimizer == OptimizerKind::Adam) {
      adam_step(L.A, g.ga, sa, lr.eta_a);
      adam_step(L.B, g.gb, sb, lr.eta_b);
    } else {
      sgd_step(L.A, g.ga, lr.eta_a);
      sgd_step(L.B, g.gb, lr.eta_b);
    }
    const DeltaTerms d = delta_decompose(a_prev, b_prev, L.A, L.B, z, L.s);
    Matrix zb = zb_of(L.A, L.B);
    rec.rms_za = rms(matmul(L.A, z));
    rec.rms_zb = rms(zb);
    rec.rms_d1 = rms(d.d1);
    rec.rms_d2 = rms(d.d2);
    rec.rms_d3 = rms(d.d3);
    const Matrix change = zb - zb_prev;
    const double change_rms = rms(change);
    Matrix resid = d.d1 + d.d2 + d.d3 - change;
    rec.decomposition_residual = change_rms > 0.0 ? rms(resid) / change_rms : rms(resid);
    if (cfg.optimizer == OptimizerKind::Adam) {
      rec.max_update_ratio_a = max_abs_diff(L.A, start_a) / (t * lr.eta_a);
      rec.max_update_ratio_b = max_abs_diff(L.B, start_b) / (t * lr.eta_b);
    }
    rec.diverged = !std::isfinite(rec.rms_zb) || !std::isfinite(rec.rms_d1) || !std::isfinite(rec.rms_d2) ||
                   !std::isfinite(rec.rms_d3) || !std::isfinite(rec.rms_za);
    out.push_back(rec);
    if (rec.diverged) break;
    zb_prev = std::move(zb);
  }
  return out;
}

}  // namespace

std::vector<ProbeRecord> run_probe(const ProbeConfig& cfg) {
  validate(cfg);
  struct Cell {
    std::size_t n;
    int seed;
  };
  std::vector<Cell> cells;
  for (std::size_t n : cfg.widths)
    for (int s = 0; s < cfg.seeds; ++s) cells.push_back({n, s});
  std::vector<std::vector<ProbeRecord>> results(cells.size());
  detail::parallel_for(cells.size(), cfg.threads,
                       [&](std::size_t i) { results[i] = run_cell(cfg, cells[i].n, cells[i].seed); });
  std::vector<ProbeRecord> all;
  for (auto& r : results) all.insert(all.end(), r.begin(), r.end());
  std::stable_sort(all.begin(), all.end(), [](const ProbeRecord& a, const ProbeRecord& b) {
    if (a.n != b.n) return a.n < b.n;
    if (a.seed != b.seed) return a.seed < b.seed;
    return a.t < b.t;
  });
  return all;
}

std::string quantity_name(Quantity q) {
  switch (q) {
    case Quantity::ZA: return "za";
    case Quantity::ZB: return "zb";
    case Quantity::D1: return "d1";
    case Quantity::D2: return "d2";
    case Quantity::D3: return "d3";
  }
  return "?";
}

double quantity_value(const ProbeRecord& r, Quantity q) {
  switch (q) {
    case Quantity::ZA: return r.rms_za;
    case Quantity::ZB: return r.rms_zb;
    case Quantity::D1: return r.rms_d1;
    case Quantity::D2: return r.rms_d2;
    case Quantity::D3: return r.rms_d3;
  }
  return 0.0;
}

SlopeFit fit_points(const std::vector<double>& widths, const std::vector<double>& values) {
  if (widths.size() != values.size()) fail(ErrorCode::ShapeMismatch, "fit_points: length mismatch");
  std::vector<double> x, y;
  SlopeFit fit;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (!(values[i] > 0.0) || !std::isfinite(values[i])) {
      fit.excluded_widths.push_back(static_cast<std::size_t>(widths[i]));
      continue;
    }
    x.push_back(std::log(widths[i]));
    y.push_back(std::log(values[i]));
  }
  if (x.size() < 3)
    fail(ErrorCode::InvalidArgument, "slope fit needs 3 widths with positive values, have " + std::to_string(x.size()));
  const double k = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= k;
  my /= k;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) fail(ErrorCode::InvalidArgument, "slope fit needs distinct widths");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.n_points = x.size();
  if (syy == 0.0) {
    fit.flat = true;
    fit.r_squared = std::numeric_limits<double>::quiet_NaN();
  } else {
    double sse = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double e = y[i] - (fit.intercept + fit.slope * x[i]);
      sse += e * e;
    }
    fit.r_squared = 1.0 - sse / syy;
  }
  return fit;
}

SlopeFit fit_slope(const std::vector<ProbeRecord>& records, Quantity q, int t) {
  // Per width: mean of ln(rms) over seeds; a width with any non-positive value is excluded.
  std::map<std::size_t, std::pair<double, int>> acc;
  std::map<std::size_t, bool> bad;
  for (const auto& r : records) {
    if (r.t != t) continue;
    const double v = quantity_value(r, q);
    auto& a = acc[r.n];
    if (!(v > 0.0) || !std::isfinite(v)) {
      bad[r.n] = true;
      continue;
    }
    a.first += std::log(v);
    a.second += 1;
  }
  std::vector<double> w, vals;
  for (const auto& [n, a] : acc) {
    w.push_back(static_cast<double>(n));
    vals.push_back(bad[n] || a.second == 0 ? 0.0 : std::exp(a.first / a.second));
  }
  return fit_points(w, vals);
}

bool VerdictTable::all_pass() const {
  if (!complete) return false;
  return std::all_of(rows.begin(), rows.end(), [](const Verdict& v) { return v.pass; });
}

static Gamma predicted_of(const RegimeReport& r, Quantity q) {
  switch (q) {
    case Quantity::ZA: return r.za;
    case Quantity::ZB: return r.zb;
    case Quantity::D1: return r.d1;
    case Quantity::D2: return r.d2;
    case Quantity::D3: return r.d3;
  }
  return Gamma();
}

VerdictTable compare_to_theory(const std::vector<ProbeRecord>& records, int t, const RegimeReport& regime,
                               const std::vector<Quantity>& quantities, double tolerance) {
  VerdictTable table;
  for (Quantity q : quantities) {
    Verdict v;
    v.quantity = quantity_name(q) + "@t" + std::to_string(t);
    v.predicted = predicted_of(regime, q);
    bool seen = false;
    if (v.predicted.is_neg_inf()) {
      double worst = 0.0;
      for (const auto& r : records)
        if (r.t == t) {
          seen = true;
          const double x = quantity_value(r, q);
          worst = std::isfinite(x) ? std::max(worst, x) : std::numeric_limits<double>::infinity();
        }
      v.fitted = worst;
      v.r_squared = std::numeric_limits<double>::quiet_NaN();
      v.pass = seen && (worst == 0.0 || worst < 1e-10);
    } else {
      for (const auto& r : records) seen = seen || r.t == t;
      if (seen) {
        try {
          SlopeFit f = fit_slope(records, q, t);
          v.fitted = f.slope;
          v.r_squared = f.r_squared;
          v.pass = std::abs(f.slope - v.predicted.to_double()) <= tolerance;
        } catch (const Error&) {
          seen = false;
        }
      }
    }
    if (!seen) {
      v.missing = true;
      v.pass = false;
      v.fitted = std::numeric_limits<double>::quiet_NaN();
      table.complete = false;
    }
    table.rows.push_back(v);
  }
  return table;
}

std::string probe_csv_header() { return "n,seed,t,rms_za,rms_zb,rms_d1,rms_d2,rms_d3"; }

std::string probe_csv_row(const ProbeRecord& r) {
  return std::to_string(r.n) + "," + std::to_string(r.seed) + "," + std::to_string(r.t) + "," +
         format_double(r.rms_za) + "," + format_double(r.rms_zb) + "," + format_double(r.rms_d1) + "," +
         format_double(r.rms_d2) + "," + format_double(r.rms_d3);
}

std::string verdict_csv_header() { return "quantity,predicted,fitted,r2,pass"; }

std::string verdict_csv_row(const Verdict& v) {
  return v.quantity + "," + v.predicted.str() + "," + format_double(v.fitted) + "," + format_double(v.r_squared) +
         "," + (v.missing ? "incomplete" : (v.pass ? "PASS" : "FAIL"));
}

}  // namespace loradyn
