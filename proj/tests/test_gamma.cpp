// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <vector>

#include "loradyn/error.hpp"
#include "loradyn/gamma.hpp"

using namespace loradyn;

namespace {

const Gamma NI = Gamma::neg_inf();
Gamma q(std::int64_t p, std::int64_t d = 1) { return Gamma(p, d); }

// {-2, -7/4, ..., 0}
std::vector<Gamma> quarter_grid() {
  std::vector<Gamma> g;
  for (int k = -8; k <= 0; ++k) g.push_back(q(k, 4));
  return g;
}

}  // namespace

TEST_CASE("parse and print") {
  CHECK(Gamma::parse("-1/2") == q(-1, 2));
  CHECK(Gamma::parse("2/4") == q(1, 2));
  CHECK(Gamma::parse("3") == q(3));
  CHECK(Gamma::parse("-inf").is_neg_inf());
  CHECK(q(-6, 4).str() == "-3/2");
  CHECK(q(4, -2).str() == "-2");
  CHECK(NI.str() == "-inf");
  CHECK_THROWS_AS(Gamma::parse("abc"), Error);
  CHECK_THROWS_AS(Gamma::parse("1/0"), Error);
  CHECK_THROWS_AS(Gamma::parse(""), Error);
}

TEST_CASE("ordering puts -inf below everything") {
  CHECK(NI < q(-1000));
  CHECK(q(-1, 2) < q(-1, 3));
  CHECK(NI == NI);
}

TEST_CASE("gmul") {
  CHECK(gmul(q(-1), q(-1, 2)) == q(-3, 2));
  CHECK(gmul(q(0), q(5, 7)) == q(5, 7));
  CHECK(gmul(NI, q(3)).is_neg_inf());
}

TEST_CASE("gadd") {
  CHECK(gadd(q(-1), q(-1, 2)) == q(-1, 2));
  CHECK(gadd(NI, q(-1)) == q(-1));
  CHECK(gadd(q(2, 3), q(2, 3)) == q(2, 3));
}

TEST_CASE("contractions") {
  CHECK(contract_rank(q(-1, 2), q(-1, 2)) == q(-1));
  CHECK(contract_rank(q(0), q(0)) == q(0));
  CHECK(contract_rank(NI, q(0)).is_neg_inf());
  CHECK(contract_width(q(-1, 2), q(0)) == q(1, 2));
  CHECK(contract_width(q(-1), q(0)) == q(0));
  CHECK(contract_width(NI, q(1, 3)).is_neg_inf());
}

TEST_CASE("adam regime examples") {
  SUBCASE("Init[A] at the optimum") {
    const auto r = adam_regime(q(-1), NI, q(-1, 2), q(-1, 2));
    CHECK(r.d1 == q(0));
    CHECK(r.d2 == q(0));
    CHECK(r.zb == q(0));
    CHECK(r.stable);
    CHECK(r.efficient);
    CHECK_FALSE(r.robust_in_eta_b);
  }
  SUBCASE("Init[B] with eta -1") {
    const auto r = adam_regime(NI, q(0), q(-1), q(-1));
    CHECK(r.zb == q(0));
    CHECK(r.stable);
    CHECK(r.d2 == q(-1));
    CHECK_FALSE(r.efficient);
  }
  SUBCASE("Init[AB] at the optimum") {
    const auto r = adam_regime(q(-1, 2), q(-1, 2), q(-1, 2), q(-1, 2));
    CHECK(r.d1 == q(0));
    CHECK(r.d2 == q(0));
    CHECK(r.zb == q(0));
    CHECK(r.robust());
  }
  SUBCASE("Init[AB] with a small rate") {
    const auto r = adam_regime(q(-1, 2), q(-1, 2), q(-1), q(-1));
    CHECK(r.d1 == q(-1, 2));
    CHECK(r.d2 == q(-1, 2));
    CHECK(r.zb == q(0));
  }
  SUBCASE("Init[A] with a small rate") {
    const auto r = adam_regime(q(-1), NI, q(-1), q(-1));
    CHECK(r.d1 == q(-1));
    CHECK(r.d2 == q(-1));
    CHECK(r.zb == q(-1));
    CHECK(r.bounded);
    CHECK_FALSE(r.stable);
  }
  SUBCASE("decoupled rates with internal stability") {
    const auto r = adam_regime(q(-1), q(0), q(-1), q(0), true);
    CHECK(r.za == q(0));
    CHECK(r.zb == q(0));
    CHECK(r.d1 == q(0));
    CHECK(r.d2 == q(0));
    CHECK(r.efficient);
    CHECK(r.internally_stable);
  }
  SUBCASE("both zero is rejected with the trainability reason") {
    try {
      adam_regime(NI, NI, q(-1, 2), q(-1, 2));
      FAIL("expected rejection");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("gradient") != std::string::npos);
    }
  }
}

TEST_CASE("adam regime invariants over the quarter grid") {
  auto grid = quarter_grid();
  auto inits = grid;
  inits.push_back(NI);
  for (const Gamma& a0 : inits)
    for (const Gamma& b0 : inits) {
      if (a0.is_neg_inf() && b0.is_neg_inf()) continue;
      for (const Gamma& ea : grid)
        for (const Gamma& eb : grid) {
          const auto r = adam_regime(a0, b0, ea, eb);
          CAPTURE(a0.str());
          CAPTURE(b0.str());
          CAPTURE(ea.str());
          CAPTURE(eb.str());
          if (r.efficient) CHECK(r.stable);
          CHECK(r.d3 == gmul(gmul(ea, eb), q(1)));
          // d1 + d2 - zB = etaA + etaB + 1
          CHECK(gmul(r.d1, r.d2) == gmul(r.zb, gmul(gmul(ea, eb), q(1))));
          const bool eq5 = gmul(ea, eb) == q(-1) && a0 <= ea && b0 <= eb;
          CHECK(r.efficient == eq5);
          if (a0 == q(-1, 2) && b0 == q(-1, 2) && ea <= q(-1, 2) && eb <= q(-1, 2)) CHECK(r.zb == q(0));
        }
    }
}

TEST_CASE("adam trajectory resolves the zero start") {
  const auto traj = adam_trajectory(q(-1), NI, q(-1, 2), q(-1, 2), 3);
  REQUIRE(traj.size() == 3);
  CHECK(traj[0].d1.is_neg_inf());  // B is still zero during step 1
  CHECK(traj[0].d3.is_neg_inf());  // A does not move on step 1
  CHECK(traj[1].d1 == q(0));
  CHECK(traj[1].d2 == q(-1, 2));   // A_1 = A_0, so B sees the init scale only
  CHECK(traj[2].d2 == q(0));
  CHECK(traj[2].zb == q(0));
  // After both matrices moved the trajectory agrees with the closed form.
  const auto closed = adam_regime(q(-1, 2), q(-1, 2), q(-1), q(-1));
  const auto ab = adam_trajectory(q(-1, 2), q(-1, 2), q(-1), q(-1), 4);
  for (const auto& r : ab) {
    CHECK(r.d1 == closed.d1);
    CHECK(r.d2 == closed.d2);
    CHECK(r.zb == closed.zb);
  }
}

TEST_CASE("sgd regime") {
  SUBCASE("fixed point") {
    const auto steps = sgd_regime(q(-3, 4), q(-1, 4), q(-1, 2), q(-1, 2), 10);
    for (const auto& s : steps) {
      CHECK(s.d1 == q(0));
      CHECK(s.d2 == q(0));
      CHECK(s.f == q(0));
      CHECK(s.efficient);
    }
  }
  SUBCASE("zero B start") {
    const auto steps = sgd_regime(q(-1), NI, q(-1, 2), q(-1, 2), 2);
    CHECK(steps[1].d1 == q(-1, 2));
    CHECK(steps[1].d2 == q(-1, 2));
    CHECK(steps[1].f == q(-1, 2));
    CHECK_FALSE(steps[1].efficient);
  }
  SUBCASE("zero A start joins the fixed point") {
    const auto steps = sgd_regime(NI, q(-1, 4), q(-1, 2), q(-1, 2), 6);
    CHECK(steps[1].a_prev == q(-3, 4));
    for (std::size_t t = 1; t < steps.size(); ++t) {
      CHECK(steps[t].a_prev == q(-3, 4));
      CHECK(steps[t].b_prev == q(-1, 4));
      CHECK(steps[t].efficient);
    }
  }
  SUBCASE("exponents never decrease") {
    for (const Gamma& a0 : {q(-2), q(-1), q(-1, 2), NI})
      for (const Gamma& b0 : {q(-1), q(-1, 4), q(0)})
        for (const Gamma& eta : {q(-2), q(-1), q(-1, 2)}) {
          const auto steps = sgd_regime(a0, b0, eta, eta, 8);
          for (std::size_t t = 1; t < steps.size(); ++t) {
            CHECK(steps[t - 1].a_prev <= steps[t].a_prev);
            CHECK(steps[t - 1].b_prev <= steps[t].b_prev);
            CHECK(steps[t - 1].f <= steps[t].f);
          }
        }
  }
  CHECK_THROWS_AS(sgd_regime(NI, NI, q(-1), q(-1), 3), Error);
  CHECK_THROWS_AS(sgd_regime(q(-1), NI, q(-1), q(-1), 0), Error);
}

TEST_CASE("table of initialization schemes") {
  const auto rows = classify_table(scheme_table_configs());
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].name == "Init[B]");
  CHECK(rows[0].stable);
  CHECK_FALSE(rows[0].efficient);
  CHECK_FALSE(rows[0].robust);
  CHECK(rows[1].name == "Init[A]");
  CHECK(rows[1].stable);
  CHECK(rows[1].efficient);
  CHECK_FALSE(rows[1].robust);
  CHECK(rows[2].name == "Init[AB]");
  CHECK(rows[2].stable);
  CHECK(rows[2].efficient);
  CHECK(rows[2].robust);
}

TEST_CASE("regime rows serialize exponents as text") {
  const auto r = adam_regime(q(-1), NI, q(-1, 2), q(-1, 2));
  const std::string row = regime_csv_row(r);
  CHECK(row.rfind("-1,-inf,-1/2,-1/2,", 0) == 0);
  CHECK(regime_csv_header().rfind("a0,b0,eta_a,eta_b", 0) == 0);
}
