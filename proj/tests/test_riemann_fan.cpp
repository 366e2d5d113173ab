#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "grpcalc/riemann_fan.hpp"

using namespace grpcalc;

namespace {

Vec v2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

} // namespace

TEST_CASE("wave_curve: origin, decoupled Hugoniot, contact line") {
    auto bp = burgers_pair();
    CHECK((wave_curve(bp, 0, 0.0, v2(0.2, 0.1)) - v2(0.2, 0.1)).cwiseAbs().maxCoeff() ==
          0.0);

    // decoupled Hugoniot locus is the e1 line; RH speed -1 by hand algebra
    Vec p = wave_curve(bp, 0, -0.4, v2(0.2, 0.1));
    CHECK(p[0] == doctest::Approx(-0.2).epsilon(1e-10));
    CHECK(p[1] == doctest::Approx(0.1).epsilon(1e-12));

    auto lin = linear_diag();
    Vec q = wave_curve(lin, 1, 0.3, v2(0.0, 0.0));
    CHECK(q[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(q[1] == doctest::Approx(0.3).epsilon(1e-10));
}

TEST_CASE("wave_curve leaves the working box") {
    auto bp = burgers_pair(0.3);
    CHECK_THROWS_AS(wave_curve(bp, 0, -1.0, v2(0.0, 0.0)), CurveLeftBox);
}

TEST_CASE("solve_riemann: trivial, BurgersPair oracle, LinearDiag oracle") {
    auto bp = burgers_pair();
    Vec uL = v2(0.2, 0.1);

    auto same = solve_riemann(bp, uL, uL);
    CHECK(same.sigma.cwiseAbs().maxCoeff() < 1e-10);
    CHECK(same.speeds[0] == doctest::Approx(-0.8).epsilon(1e-9));
    CHECK(same.speeds[1] == doctest::Approx(1.1).epsilon(1e-9));

    auto fan = solve_riemann(bp, uL, v2(-0.2, -0.1));
    CHECK(fan.sigma[0] == doctest::Approx(-0.4).epsilon(1e-10));
    CHECK(fan.sigma[1] == doctest::Approx(-0.2).epsilon(1e-10));
    CHECK((fan.states[1] - v2(-0.2, 0.1)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(fan.speeds[0] == doctest::Approx(-1.0).epsilon(1e-10));
    CHECK(fan.speeds[1] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(fan.kinds[0] == WaveKind::Shock);
    CHECK(fan.kinds[1] == WaveKind::Shock);

    auto lin = linear_diag();
    auto lfan = solve_riemann(lin, v2(1.0, 0.0), v2(0.0, 1.0));
    CHECK(lfan.sigma[0] == doctest::Approx(-1.0).epsilon(1e-10));
    CHECK(lfan.sigma[1] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK((lfan.states[1] - v2(0.0, 0.0)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(lfan.speeds[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(lfan.speeds[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(lfan.kinds[0] == WaveKind::Contact);
}

TEST_CASE("solve_riemann: decoupled oracle on random data") {
    auto bp = burgers_pair();
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> unif(0.01, 0.2);
    for (int trial = 0; trial < 50; ++trial) {
        // decoupled scalar shocks need uL_i > uR_i componentwise
        Vec uL = v2(unif(rng), unif(rng));
        Vec uR = v2(-unif(rng), -unif(rng));
        auto fan = solve_riemann(bp, uL, uR);
        // sigma equals the componentwise difference for the diagonal system
        CHECK((fan.sigma - (uR - uL)).cwiseAbs().maxCoeff() < 1e-10);
        // scalar RH mean speeds
        CHECK(fan.speeds[0] ==
              doctest::Approx(0.5 * (uL[0] + uR[0]) - 1.0).epsilon(1e-9));
        CHECK(fan.speeds[1] ==
              doctest::Approx(0.5 * (uL[1] + uR[1]) + 1.0).epsilon(1e-9));
    }
}

TEST_CASE("solve_riemann: round trip through the wave map") {
    auto bp = burgers_pair();
    std::mt19937 rng(4242);
    std::uniform_real_distribution<double> unif(-0.3, 0.0);
    for (int trial = 0; trial < 30; ++trial) {
        Vec uL = v2(0.15, 0.05);
        Vec sigma = v2(unif(rng), unif(rng));
        Vec uR = wave_map(bp, sigma, uL);
        auto fan = solve_riemann(bp, uL, uR);
        CHECK((fan.sigma - sigma).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("solve_riemann: rarefaction rejected") {
    auto bp = burgers_pair();
    CHECK_THROWS_AS(solve_riemann(bp, v2(-0.2, 0.0), v2(0.2, 0.0)), RarefactionRequired);
}

TEST_CASE("validate_admissible_set") {
    auto bp = burgers_pair();
    Vec uL = v2(0.2, 0.1), uR = v2(-0.2, -0.1);
    auto ctrl = constant_control(uL, uR, 0.0, 0.05, 1.0, 0.25, 0.5);
    auto rep = validate_admissible_set(bp, ctrl, uL, uR, 11);
    CHECK(rep.pass);
    CHECK(rep.failures.empty());

    auto bad = constant_control(v2(-0.2, 0.1), v2(0.2, -0.1), 0.0, 0.05, 1.0, 0.25, 0.5);
    auto brep = validate_admissible_set(bp, bad, v2(-0.2, 0.1), v2(0.2, -0.1), 5);
    CHECK(!brep.pass);

    auto lin = linear_diag();
    auto lrep = validate_admissible_set(lin, ctrl, uL, uR, 5);
    CHECK(lrep.pass);  // vacuous for LD-only systems
}

TEST_CASE("jump_condition_residual") {
    auto bp = burgers_pair();
    Vec y = v2(0.2, 0.1);
    auto [s0, r0] = jump_condition_residual(bp, y, y, 0);
    CHECK(r0.cwiseAbs().maxCoeff() == 0.0);
    CHECK(s0 == doctest::Approx(-0.8).epsilon(1e-9));

    auto [s1, r1] = jump_condition_residual(bp, v2(0.2, 0.1), v2(-0.2, 0.1), 0);
    CHECK(s1 == doctest::Approx(-1.0).epsilon(1e-10));
    CHECK(std::abs(r1[0]) < 1e-12);

    auto [s2, r2] = jump_condition_residual(bp, v2(0.2, 0.1), v2(-0.2, 0.2), 0);
    CHECK(r2[0] == doctest::Approx(0.1).epsilon(1e-10));
}
