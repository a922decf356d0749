// SPDX-License-Identifier: Apache-2.0
//
// Width exponents: exact rationals with a distinguished -inf (the exponent of 0).
// Products add exponents, sums take the max.
#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace loradyn {

class Gamma {
 public:
  Gamma() = default;  // 0
  Gamma(std::int64_t num, std::int64_t den = 1);
  static Gamma neg_inf();
  static Gamma parse(std::string_view text);  // "p/q", "p", "-inf"

  bool is_neg_inf() const { return neg_inf_; }
  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  double to_double() const;
  std::string str() const;  // "p/q", "p" or "-inf"

  friend bool operator==(const Gamma& a, const Gamma& b) = default;
  friend std::strong_ordering operator<=>(const Gamma& a, const Gamma& b);

 private:
  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
  bool neg_inf_ = false;
};

Gamma gmul(Gamma u, Gamma v);            // u + v, -inf absorbing
Gamma gadd(Gamma u, Gamma v);            // max(u, v)
Gamma contract_rank(Gamma u, Gamma v);   // inner product over the rank dimension
Gamma contract_width(Gamma u, Gamma v);  // inner product over the width dimension: u + v + 1

struct RegimeReport {
  Gamma a0, b0, eta_a, eta_b;
  Gamma d1, d2, d3, za, zb;
  bool stable = false;             // zb == 0
  bool bounded = false;            // zb <= 0
  bool efficient = false;          // stable, d1 == 0, d2 == 0 (and za == 0 when internal stability is required)
  bool internally_stable = false;  // za == 0
  bool robust_in_eta_a = false;
  bool robust_in_eta_b = false;
  bool robust() const { return robust_in_eta_a && robust_in_eta_b; }
};

// Closed-form Adam system with normalized gradients of exponent 0.
RegimeReport adam_regime(Gamma a0, Gamma b0, Gamma eta_a, Gamma eta_b, bool require_internal = false);

// Step-resolved Adam exponents. Tracks which matrix is still exactly zero,
// so the first step after a zero initialization is reported faithfully.
// Entry t-1 describes step t.
std::vector<RegimeReport> adam_trajectory(Gamma a0, Gamma b0, Gamma eta_a, Gamma eta_b, int steps);

struct SgdStep {
  int t = 0;
  Gamma a_prev, b_prev;  // exponents of a_{t-1}, b_{t-1}
  Gamma d1, d2, f;       // f is the exponent of the output before the step
  bool stable = false;   // f == 0
  bool efficient = false;
};

// Max-plus recurrences of the rank-1 model f(x) = b a^T x under SGD.
std::vector<SgdStep> sgd_regime(Gamma a0, Gamma b0, Gamma eta_a, Gamma eta_b, int steps);

struct SchemeConfig {
  std::string name;
  Gamma a0, b0, eta;  // uniform learning-rate exponent
};

struct TableRow {
  std::string name;
  bool stable = false;
  bool efficient = false;
  bool robust = false;
  RegimeReport report;
};

std::vector<SchemeConfig> scheme_table_configs();
std::vector<TableRow> classify_table(const std::vector<SchemeConfig>& configs);

std::string regime_csv_header();
std::string regime_csv_row(const RegimeReport& r);
std::string sgd_csv_header();
std::string sgd_csv_row(const SgdStep& s);

}  // namespace loradyn
