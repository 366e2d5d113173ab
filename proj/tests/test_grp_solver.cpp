#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "grpcalc/grp_solver.hpp"

using namespace grpcalc;

namespace {

Vec v2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

ReferenceDomain base_domain(int M, int P, double T = 0.1, double ell = 1.0,
                            double eps = 0.05) {
    ReferenceDomain dom;
    dom.T = T;
    dom.ell = ell;
    dom.eps = eps;
    dom.grid = {M, P};
    return dom;
}

Control smooth_control(std::function<Vec(double)> ul, std::function<Vec(double)> ulp,
                       std::function<Vec(double)> ur, std::function<Vec(double)> urp,
                       double x0, double eps, double ell) {
    Control c;
    c.u_left = std::move(ul);
    c.u_left_deriv = std::move(ulp);
    c.u_right = std::move(ur);
    c.u_right_deriv = std::move(urp);
    c.x0 = x0;
    c.eps = eps;
    c.ell = ell;
    c.M0 = 1.0;
    c.M1 = 1.0;
    return c;
}

} // namespace

TEST_CASE("dilate_initial: identity, linear stretch, constants, domain errors") {
    auto lin_ul = [](double x) { return v2(x, 2.0 * x); };
    auto lin_ulp = [](double) { return v2(1.0, 2.0); };
    auto cst = [](double) { return v2(0.3, -0.1); };
    auto zero = [](double) { return v2(0.0, 0.0); };

    auto c0 = smooth_control(lin_ul, lin_ulp, cst, zero, 0.0, 0.15, 1.0);
    auto d0 = dilate_initial(c0);
    CHECK(d0.ul(-0.7)[0] == doctest::Approx(-0.7).epsilon(1e-14));
    CHECK(d0.ur(0.4)[0] == doctest::Approx(0.3).epsilon(1e-14));

    // u_l(x) = x, x0 = 0.1: dilated data is 1.1 xbar + 0.1
    auto c1 = smooth_control(lin_ul, lin_ulp, cst, zero, 0.1, 0.15, 1.0);
    auto d1 = dilate_initial(c1);
    CHECK(d1.ul(-1.0)[0] == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(d1.ul(0.0)[0] == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(d1.ul(-0.5)[0] == doctest::Approx(1.1 * -0.5 + 0.1).epsilon(1e-14));
    CHECK(d1.ul_deriv(-0.5)[0] == doctest::Approx(1.1).epsilon(1e-14));
    CHECK(d1.ur_deriv(0.5)[1] == doctest::Approx(0.0));

    // constants are unaffected by the dilation
    CHECK((d1.ur(0.25) - v2(0.3, -0.1)).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(d1.ul(0.5), ArgumentOutOfDomain);
    CHECK_THROWS_AS(d1.ur(-0.5), ArgumentOutOfDomain);
    auto bad = smooth_control(lin_ul, lin_ulp, cst, zero, 0.2, 0.15, 1.0);
    CHECK_THROWS_AS(dilate_initial(bad), ArgumentOutOfDomain);
}

TEST_CASE("grp_boundary_G: pass-through cancellations and denominator guard") {
    auto bp = burgers_pair();
    Vec v = v2(0.1, -0.2);
    CHECK(grp_boundary_G(bp, 1, 1, 0.37, v, v) == doctest::Approx(0.37).epsilon(1e-14));

    // diagonal frame, jump along e1: every correction vanishes
    CHECK(grp_boundary_G(bp, 1, 1, 0.42, v2(0.2, 0.1), v2(-0.2, 0.1)) ==
          doctest::Approx(0.42).epsilon(1e-12));

    auto lin = linear_diag();
    CHECK(grp_boundary_G(lin, 1, 1, -0.3, v2(1.0, 0.3), v2(0.0, 0.3)) ==
          doctest::Approx(-0.3).epsilon(1e-12));
    // mirrored slow-field form, jump along e2 at the second curve
    CHECK(grp_boundary_G(lin, 0, 2, 0.5, v2(0.4, 1.0), v2(0.4, 0.0)) ==
          doctest::Approx(0.5).epsilon(1e-12));

    // frames rotating by more than 60 degrees across the jump break the
    // diagonal-dominance requirement on l_i(vL,vR)^T r_i
    SystemModel rot;
    rot.n = 2;
    rot.flux = [](const Vec& y) { return Vec(v2(0.0, 0.0) + y); };
    rot.flux_jacobian = [](const Vec& y) {
        double th = 2.4 * y[0], co = std::cos(th), si = std::sin(th);
        Mat R(2, 2), D(2, 2);
        R << co, -si, si, co;
        D << -1.0, 0.0, 0.0, 1.0;
        return Mat(R * D * R.transpose());
    };
    rot.lambda_max = 1.0;
    rot.eta_min = 2.0;
    rot.field_kinds = {FieldKind::GenuinelyNonlinear, FieldKind::GenuinelyNonlinear};
    rot.finalize();
    CHECK_THROWS_AS(grp_boundary_G(rot, 1, 1, 0.0, v2(0.0, 0.0), v2(1.0, 0.0)),
                    DenominatorTooSmall);
}

TEST_CASE("solve_grp: constant-fan baseline is exact") {
    auto bp = burgers_pair();
    Vec uL = v2(0.2, 0.1), uR = v2(-0.2, -0.1);
    auto ctrl = constant_control(uL, uR, 0.0, 0.05, 1.0, 0.25, 0.5);
    GrpParams params;
    auto sol = solve_grp(bp, base_domain(16, 16), ctrl, params);

    CHECK(sol.diagnostics.outer_residuals.size() <= 2);
    double err = 0.0;
    for (int j = 0; j < sol.dom.sectors(); ++j)
        for (const auto& v : sol.ybar.vals[j])
            err = std::max(err, (v - sol.fan.states[j]).cwiseAbs().maxCoeff());
    CHECK(err <= 1e-9);
    for (int m = 0; m <= 16; ++m) {
        double t = m * sol.dom.dt();
        CHECK(std::abs(sol.curves.xi[1][m] - (-t)) <= 1e-9);
        CHECK(std::abs(sol.curves.xi[2][m] - t) <= 1e-9);
    }
    CHECK(sol.ybar_x.pc0_norm() <= 1e-9);

    // sample_physical fan geometry
    CHECK((sample_physical(sol, 0.05, -0.5) - uL).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((sample_physical(sol, 0.05, 0.0) - v2(-0.2, 0.1)).cwiseAbs().maxCoeff() <=
          1e-9);
    double x_on_shock = sol.curves.xi_at(1, 0.05);
    CHECK((sample_physical(sol, 0.05, x_on_shock) - v2(-0.2, 0.1))
              .cwiseAbs()
              .maxCoeff() <= 1e-9);  // right-limit convention
    CHECK_THROWS_AS(sample_physical(sol, 0.05, -2.0), OutsidePhysicalDomain);

    auto rep = entropy_and_rh_report(sol);
    CHECK(rep.pass);
    CHECK(rep.max_rh <= 1e-9);
    // shock 1 margins are 0.2; the tighter 0.1 comes from shock 2
    CHECK(rep.own_margin[0][0] == doctest::Approx(0.2).epsilon(1e-8));
    CHECK(rep.min_own_margin == doctest::Approx(0.1).epsilon(1e-8));

    auto kr = derivative_boundary_residual(sol);
    CHECK(kr.max_residual <= 1e-7);  // fan traces: every K term vanishes
}

TEST_CASE("solve_grp: x0 shift of the constant fan moves only the curves") {
    auto bp = burgers_pair();
    Vec uL = v2(0.2, 0.1), uR = v2(-0.2, -0.1);
    auto ctrl = constant_control(uL, uR, 0.05, 0.06, 1.0, 0.25, 0.5);
    GrpParams params;
    auto sol = solve_grp(bp, base_domain(16, 16, 0.1, 1.0, 0.06), ctrl, params);
    double err = 0.0;
    for (int j = 0; j < sol.dom.sectors(); ++j)
        for (const auto& v : sol.ybar.vals[j])
            err = std::max(err, (v - sol.fan.states[j]).cwiseAbs().maxCoeff());
    CHECK(err <= 1e-9);
    for (int m = 0; m <= 16; ++m) {
        double t = m * sol.dom.dt();
        CHECK(std::abs(sol.curves.xi[1][m] - (0.05 - t)) <= 1e-9);
        CHECK(std::abs(sol.curves.xi[2][m] - (0.05 + t)) <= 1e-9);
    }
}

namespace {

// smooth decoupled transport: closed-form solution for linear_diag
struct LinOracle {
    std::function<Vec(double)> ul, ur;
    Vec exact(double t, double x) const {
        double f1 = x + t, f2 = x - t;
        return v2((f1 < 0.0 ? ul : ur)(f1)[0], (f2 < 0.0 ? ul : ur)(f2)[1]);
    }
};

double lin_solve_error(int M, int P, const LinOracle& oracle, GrpSolution* out = nullptr) {
    auto lin = linear_diag();
    auto ctrl = smooth_control(
        oracle.ul, [](double) { return v2(0.0, 0.0); }, oracle.ur,
        [](double) { return v2(0.0, 0.0); }, 0.0, 0.05, 1.0);
    GrpParams params;
    params.c_y = 5.0;  // cubic data exceeds the nominal-fan default bound
    auto sol = solve_grp(lin, base_domain(M, P), ctrl, params);
    double err = 0.0;
    for (int k = 0; k < 200; ++k) {
        double t = 0.1 * ((k % 10) + 1) / 10.0;
        double x = -0.8 + 1.6 * (k / 10) / 19.0;
        if (std::abs(x + t) < 0.02 || std::abs(x - t) < 0.02) continue;  // contacts
        err = std::max(err,
                       (sample_physical(sol, t, x) - oracle.exact(t, x))
                           .cwiseAbs()
                           .maxCoeff());
    }
    if (out) *out = std::move(sol);
    return err;
}

} // namespace

TEST_CASE("solve_grp: smooth transport matches the closed form to O(h)") {
    LinOracle oracle;
    oracle.ul = [](double x) {
        return v2(0.3 * x * x * x - 0.2 * x + 0.1,
                  -0.1 * x * x * x + 0.2 * x * x + 0.05);
    };
    oracle.ur = [](double x) {
        return v2(0.2 * x * x * x + 0.1 * x, 0.4 * x * x * x - 0.3 * x + 0.2);
    };
    GrpSolution sol;
    double e32 = lin_solve_error(32, 32, oracle, &sol);
    CHECK(e32 <= 1e-2);
    double e64 = lin_solve_error(64, 64, oracle);
    CHECK(e32 / e64 >= 1.5);

    // outer Picard residuals decrease monotonically after the first step
    const auto& res = sol.diagnostics.outer_residuals;
    for (size_t k = 2; k < res.size(); ++k) CHECK(res[k] <= res[k - 1]);

    // contacts: own-field Lax margins are exactly zero
    auto rep = entropy_and_rh_report(sol);
    CHECK(rep.pass);
    CHECK(std::abs(rep.min_own_margin) <= 1e-12);

    // derivative node condition on the contact traces: O(h) consistency
    auto k32 = derivative_boundary_residual(sol);
    CHECK(k32.max_residual <= 0.05);
}

TEST_CASE("derivative_boundary_residual: refinement study on smooth data") {
    LinOracle oracle;
    oracle.ul = [](double x) { return v2(0.3 * x * x * x - 0.2 * x + 0.1, 0.1 * x * x * x); };
    oracle.ur = [](double x) { return v2(0.2 * x * x * x + 0.1 * x, 0.4 * x * x * x + 0.2); };
    GrpSolution s16, s32;
    lin_solve_error(16, 16, oracle, &s16);
    lin_solve_error(32, 32, oracle, &s32);
    double r16 = derivative_boundary_residual(s16).max_residual;
    double r32 = derivative_boundary_residual(s32).max_residual;
    CHECK(r32 <= 0.05);
    CHECK(r16 / r32 >= 1.5);
}

TEST_CASE("entropy_and_rh_report: tampered solution is flagged") {
    auto bp = burgers_pair();
    auto ctrl = constant_control(v2(0.2, 0.1), v2(-0.2, -0.1), 0.0, 0.05, 1.0, 0.25,
                                 0.5);
    GrpParams params;
    auto sol = solve_grp(bp, base_domain(8, 8), ctrl, params);
    // swap the left state and the middle state: the field-1 jump flips sign
    for (auto& v : sol.ybar.vals[0]) v = sol.fan.states[1];
    for (auto& v : sol.ybar.vals[1]) v = sol.fan.states[0];
    auto rep = entropy_and_rh_report(sol);
    CHECK(!rep.pass);
    CHECK(rep.min_own_margin < 0.0);
}

TEST_CASE("solve_grp: shift equivariance") {
    auto bp = burgers_pair();
    Vec uL = v2(0.2, 0.1), uR = v2(-0.2, -0.1), c = v2(0.05, -0.03);
    GrpParams params;
    auto sol = solve_grp(bp, base_domain(16, 16),
                         constant_control(uL, uR, 0.0, 0.05, 1.0, 0.25, 0.5), params);
    auto shifted = shift_system(bp, c);
    auto sol2 = solve_grp(
        shifted, base_domain(16, 16),
        constant_control(Vec(uL - c), Vec(uR - c), 0.0, 0.05, 1.0, 0.25, 0.5), params);
    double err = 0.0;
    for (int j = 0; j < sol.dom.sectors(); ++j)
        for (size_t k = 0; k < sol.ybar.vals[j].size(); ++k)
            err = std::max(err, (sol.ybar.vals[j][k] - sol2.ybar.vals[j][k] - c)
                                    .cwiseAbs()
                                    .maxCoeff());
    CHECK(err <= 1e-10);
    for (int m = 0; m <= 16; ++m)
        CHECK(std::abs(sol.curves.xi[1][m] - sol2.curves.xi[1][m]) <= 1e-10);
}
