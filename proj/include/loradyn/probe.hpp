// SPDX-License-Identifier: Apache-2.0
//
// Width-scaling measurements on a single adapted layer trained on one data point.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "loradyn/gamma.hpp"
#include "loradyn/lora.hpp"
#include "loradyn/optim.hpp"

namespace loradyn {

enum class OptimizerKind { Adam, Sgd };
std::string optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct ProbeConfig {
  std::vector<std::size_t> widths = {256, 512, 1024, 2048, 4096};
  std::size_t rank = 8;
  InitKind scheme = InitKind::A;
  // Starting exponents; unset means the scheme default.
  std::optional<Gamma> a0, b0;
  LrSpec lr{0.2, Gamma(-1, 2), 1.0};
  OptimizerKind optimizer = OptimizerKind::Adam;
  int steps = 10;
  int seeds = 5;
  std::uint64_t master_seed = 1;
  std::size_t out_dim = 0;     // 0: square layer of the probed width
  double target_scale = 10.0;  // targets are N(0, target_scale^2)
  double s = 1.0;
  int threads = 1;
};

// Scheme defaults: init_a (-1, -inf), init_b (-inf, 0), init_ab and init_ab_plus (-1/2, -1/2).
std::pair<Gamma, Gamma> scheme_exponents(InitKind k);
Gamma probe_a0(const ProbeConfig& cfg);
Gamma probe_b0(const ProbeConfig& cfg);

// Entry standard deviations realizing the exponents at width n: A uses n^(a0+1/2) so that
// A*Z has exponent a0+1 for unit inputs, B uses n^b0.
double probe_std_a(Gamma a0, double n);
double probe_std_b(Gamma b0, double n);

void validate(const ProbeConfig& cfg);

// Exponents the theory assigns to step t of this probe. With step_resolved the Adam
// prediction comes from adam_trajectory instead of the closed form; SGD is always step-resolved.
RegimeReport predicted_regime(const ProbeConfig& cfg, int t, bool step_resolved);

struct ProbeRecord {
  std::size_t n = 0;
  int seed = 0;
  int t = 0;
  double rms_za = 0, rms_zb = 0, rms_d1 = 0, rms_d2 = 0, rms_d3 = 0;
  double decomposition_residual = 0;  // rms(d1+d2+d3 - dZ_B) / rms(dZ_B), 0 when dZ_B = 0
  double max_update_ratio_a = 0;      // max |A_t - A_0| / (t * eta_A), Adam only
  double max_update_ratio_b = 0;
  bool diverged = false;
};

std::vector<ProbeRecord> run_probe(const ProbeConfig& cfg);

enum class Quantity { ZA, ZB, D1, D2, D3 };
std::string quantity_name(Quantity q);
double quantity_value(const ProbeRecord& r, Quantity q);

struct SlopeFit {
  double slope = 0, intercept = 0, r_squared = 0;
  std::size_t n_points = 0;
  bool flat = false;  // no variation in the data, r^2 undefined
  std::vector<std::size_t> excluded_widths;
};

// OLS of ln(rms) on ln(n); ln(rms) is averaged over seeds at each width first.
SlopeFit fit_slope(const std::vector<ProbeRecord>& records, Quantity q, int t);
SlopeFit fit_points(const std::vector<double>& widths, const std::vector<double>& values);

struct Verdict {
  std::string quantity;
  Gamma predicted;
  double fitted = 0;
  double r_squared = 0;
  bool pass = false;
  bool missing = false;
};

struct VerdictTable {
  std::vector<Verdict> rows;
  bool complete = true;
  bool all_pass() const;
};

VerdictTable compare_to_theory(const std::vector<ProbeRecord>& records, int t, const RegimeReport& regime,
                               const std::vector<Quantity>& quantities, double tolerance = 0.25);

std::string probe_csv_header();
std::string probe_csv_row(const ProbeRecord& r);
std::string verdict_csv_header();
std::string verdict_csv_row(const Verdict& v);

}  // namespace loradyn
