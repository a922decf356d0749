// SPDX-License-Identifier: Apache-2.0
#include "loradyn/gamma.hpp"

#include <charconv>
#include <limits>
#include <numeric>

#include "loradyn/error.hpp"

namespace loradyn {

namespace {

std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_mul_overflow(a, b, &r)) fail(ErrorCode::InvalidArgument, "exponent arithmetic overflow");
  return r;
}

std::int64_t checked_add(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_add_overflow(a, b, &r)) fail(ErrorCode::InvalidArgument, "exponent arithmetic overflow");
  return r;
}

std::int64_t parse_int(std::string_view s, std::string_view whole) {
  std::int64_t v = 0;
  const char* first = s.data();
  if (!s.empty() && s.front() == '+') ++first;
  auto [p, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    fail(ErrorCode::InvalidArgument, "cannot parse exponent '" + std::string(whole) + "'");
  return v;
}

}  // namespace

Gamma::Gamma(std::int64_t num, std::int64_t den) {
  if (den == 0) fail(ErrorCode::InvalidArgument, "exponent with zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  std::int64_t g = std::gcd(num, den);
  if (g == 0) g = 1;
  num_ = num / g;
  den_ = den / g;
}

Gamma Gamma::neg_inf() {
  Gamma g;
  g.neg_inf_ = true;
  return g;
}

Gamma Gamma::parse(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (text == "-inf" || text == "-INF" || text == "neg_inf") return neg_inf();
  auto slash = text.find('/');
  if (slash == std::string_view::npos) return Gamma(parse_int(text, text), 1);
  return Gamma(parse_int(text.substr(0, slash), text), parse_int(text.substr(slash + 1), text));
}

double Gamma::to_double() const {
  if (neg_inf_) return -std::numeric_limits<double>::infinity();
  return static_cast<double>(num_) / static_cast<double>(den_);
}

std::string Gamma::str() const {
  if (neg_inf_) return "-inf";
  if (den_ == 1) return std::to_string(num_);
  return std::to_string(num_) + "/" + std::to_string(den_);
}

std::strong_ordering operator<=>(const Gamma& a, const Gamma& b) {
  if (a.neg_inf_ || b.neg_inf_) {
    if (a.neg_inf_ && b.neg_inf_) return std::strong_ordering::equal;
    return a.neg_inf_ ? std::strong_ordering::less : std::strong_ordering::greater;
  }
  // denominators are positive
  return checked_mul(a.num_, b.den_) <=> checked_mul(b.num_, a.den_);
}

Gamma gmul(Gamma u, Gamma v) {
  if (u.is_neg_inf() || v.is_neg_inf()) return Gamma::neg_inf();
  return Gamma(checked_add(checked_mul(u.num(), v.den()), checked_mul(v.num(), u.den())),
               checked_mul(u.den(), v.den()));
}

Gamma gadd(Gamma u, Gamma v) { return u < v ? v : u; }

Gamma contract_rank(Gamma u, Gamma v) { return gmul(u, v); }

Gamma contract_width(Gamma u, Gamma v) { return gmul(gmul(u, v), Gamma(1)); }

static void require_trainable(Gamma a0, Gamma b0) {
  if (a0.is_neg_inf() && b0.is_neg_inf())
    fail(ErrorCode::InvalidArgument,
         "both A0 and B0 are zero: every gradient vanishes and the adapter can never move");
}

static void finish_flags(RegimeReport& r, bool require_internal) {
  const Gamma zero;
  r.stable = r.zb == zero;
  r.bounded = r.zb <= zero;
  r.internally_stable = r.za == zero;
  r.efficient = r.stable && r.d1 == zero && r.d2 == zero && (!require_internal || r.internally_stable);
}

RegimeReport adam_regime(Gamma a0, Gamma b0, Gamma eta_a, Gamma eta_b, bool require_internal) {
  require_trainable(a0, b0);
  RegimeReport r;
  r.a0 = a0;
  r.b0 = b0;
  r.eta_a = eta_a;
  r.eta_b = eta_b;
  const Gamma one(1);
  const Gamma a_scale = gadd(a0, eta_a);
  const Gamma b_scale = gadd(b0, eta_b);
  r.d1 = gmul(gmul(b_scale, eta_a), one);
  r.d2 = gmul(gmul(a_scale, eta_b), one);
  r.d3 = gmul(gmul(eta_a, eta_b), one);
  r.za = gmul(a_scale, one);
  r.zb = gmul(gmul(a_scale, b_scale), one);
  r.robust_in_eta_b = b0 >= eta_b;
  r.robust_in_eta_a = a0 >= eta_a;
  finish_flags(r, require_internal);
  return r;
}

std::vector<RegimeReport> adam_trajectory(Gamma a0, Gamma b0, Gamma eta_a, Gamma eta_b, int steps) {
  require_trainable(a0, b0);
  if (steps < 1) fail(ErrorCode::InvalidArgument, "steps must be >= 1");
  const Gamma one(1);
  Gamma a = a0, b = b0;
  std::vector<RegimeReport> out;
  for (int t = 1; t <= steps; ++t) {
    // The gradient of A is proportional to B and vice versa.
    const Gamma da = b.is_neg_inf() ? Gamma::neg_inf() : eta_a;
    const Gamma db = a.is_neg_inf() ? Gamma::neg_inf() : eta_b;
    RegimeReport r;
    r.a0 = a0;
    r.b0 = b0;
    r.eta_a = eta_a;
    r.eta_b = eta_b;
    r.d1 = gmul(gmul(b, da), one);
    r.d2 = gmul(gmul(db, a), one);
    r.d3 = gmul(gmul(db, da), one);
    a = gadd(a, da);
    b = gadd(b, db);
    r.za = gmul(a, one);
    r.zb = gmul(gmul(a, b), one);
    r.robust_in_eta_b = b0 >= eta_b;
    r.robust_in_eta_a = a0 >= eta_a;
    finish_flags(r, false);
    out.push_back(r);
  }
  return out;
}

std::vector<SgdStep> sgd_regime(Gamma a0, Gamma b0, Gamma eta_a, Gamma eta_b, int steps) {
  require_trainable(a0, b0);
  if (steps < 1) fail(ErrorCode::InvalidArgument, "steps must be >= 1");
  const Gamma one(1), two(2);
  Gamma a = a0, b = b0;
  std::vector<SgdStep> out;
  for (int t = 1; t <= steps; ++t) {
    SgdStep s;
    s.t = t;
    s.a_prev = a;
    s.b_prev = b;
    s.d1 = gmul(gmul(eta_a, gmul(b, b)), one);
    s.d2 = gmul(gmul(eta_b, gmul(a, a)), two);
    s.f = gmul(gmul(a, b), one);
    s.stable = s.f == Gamma();
    s.efficient = s.stable && s.d1 == Gamma() && s.d2 == Gamma();
    out.push_back(s);
    const Gamma next_a = gadd(a, gmul(eta_a, b));
    const Gamma next_b = gadd(b, gmul(gmul(eta_b, a), one));
    a = next_a;
    b = next_b;
  }
  return out;
}

std::vector<SchemeConfig> scheme_table_configs() {
  return {
      {"Init[B]", Gamma::neg_inf(), Gamma(0), Gamma(-1)},
      {"Init[A]", Gamma(-1), Gamma::neg_inf(), Gamma(-1, 2)},
      {"Init[AB]", Gamma(-1, 2), Gamma(-1, 2), Gamma(-1, 2)},
  };
}

std::vector<TableRow> classify_table(const std::vector<SchemeConfig>& configs) {
  std::vector<TableRow> rows;
  for (const auto& c : configs) {
    TableRow row;
    row.name = c.name;
    row.report = adam_regime(c.a0, c.b0, c.eta, c.eta);
    row.stable = row.report.stable;
    row.efficient = row.report.efficient;
    row.robust = row.report.robust();
    rows.push_back(row);
  }
  return rows;
}

std::string regime_csv_header() {
  return "a0,b0,eta_a,eta_b,gamma_d1,gamma_d2,gamma_d3,gamma_za,gamma_zb,stable,bounded,efficient,"
         "internally_stable,robust_in_eta_a,robust_in_eta_b";
}

std::string regime_csv_row(const RegimeReport& r) {
  auto b = [](bool v) { return v ? "1" : "0"; };
  std::string s;
  for (const Gamma* g : {&r.a0, &r.b0, &r.eta_a, &r.eta_b, &r.d1, &r.d2, &r.d3, &r.za, &r.zb}) s += g->str() + ",";
  s += std::string(b(r.stable)) + "," + b(r.bounded) + "," + b(r.efficient) + "," + b(r.internally_stable) + "," +
       b(r.robust_in_eta_a) + "," + b(r.robust_in_eta_b);
  return s;
}

std::string sgd_csv_header() { return "t,gamma_a,gamma_b,gamma_d1,gamma_d2,gamma_f,stable,efficient"; }

std::string sgd_csv_row(const SgdStep& s) {
  return std::to_string(s.t) + "," + s.a_prev.str() + "," + s.b_prev.str() + "," + s.d1.str() + "," + s.d2.str() +
         "," + s.f.str() + "," + (s.stable ? "1" : "0") + "," + (s.efficient ? "1" : "0");
}

}  // namespace loradyn
