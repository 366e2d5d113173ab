#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "grpcalc/objective.hpp"

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

GrpSolution fan_solution(int M, int P) {
    auto bp = burgers_pair();
    auto ctrl = constant_control(v2(0.2, 0.1), v2(-0.2, -0.1), 0.0, 0.05, 1.0, 0.25,
                                 0.5);
    GrpParams params;
    return solve_grp(bp, base_domain(M, P), ctrl, params);
}

ControlVariation const_variation(const Vec& dl, const Vec& dr, double dx0) {
    ControlVariation v;
    v.du_left = [dl](double) { return dl; };
    v.du_right = [dr](double) { return dr; };
    v.dx0 = dx0;
    return v;
}

TrackingObjective norm_objective(double a, double b) {
    TrackingObjective obj;
    obj.a = a;
    obj.b = b;
    obj.phi = [](const Vec& y, const Vec&) { return y.squaredNorm(); };
    obj.dphi_dy = [](const Vec& y, const Vec&) { return Vec(2.0 * y); };
    obj.y_target = [](double) { return v2(0.0, 0.0); };
    return obj;
}

TrackingObjective tracking_objective(double a, double b,
                                     std::function<Vec(double)> yd,
                                     std::vector<double> breaks = {}) {
    TrackingObjective obj;
    obj.a = a;
    obj.b = b;
    obj.phi = [](const Vec& y, const Vec& yd) { return (y - yd).squaredNorm(); };
    obj.dphi_dy = [](const Vec& y, const Vec& yd) { return Vec(2.0 * (y - yd)); };
    obj.y_target = std::move(yd);
    obj.target_breaks = std::move(breaks);
    return obj;
}

} // namespace

TEST_CASE("evaluate: piecewise-constant hand oracles") {
    auto sol = fan_solution(16, 16);

    // all three fan states have squared norm 0.05
    CHECK(evaluate(norm_objective(-0.5, 0.5), sol) ==
          doctest::Approx(0.05).epsilon(1e-10));

    // linear integrand: the sector contributions cancel exactly
    TrackingObjective lin = norm_objective(-0.5, 0.5);
    lin.phi = [](const Vec& y, const Vec&) { return y[0] + 2.0 * y[1]; };
    CHECK(std::abs(evaluate(lin, sol)) <= 1e-12);

    // perfect tracking of the exact trace
    auto exact = [&](double x) { return sample_physical(sol, sol.dom.T, x); };
    double x1 = sol.curves.xi_at(1, sol.dom.T), x2 = sol.curves.xi_at(2, sol.dom.T);
    CHECK(std::abs(evaluate(tracking_objective(-0.5, 0.5, exact, {x1, x2}), sol)) <=
          1e-12);

    // splitting at the shocks is what makes the quadrature exact: the naive
    // unsplit trapezoid misses the first-component jump by O(segment width)
    TrackingObjective first = norm_objective(-0.5, 0.5);
    first.phi = [](const Vec& y, const Vec&) { return y[0]; };
    CHECK(evaluate(first, sol) == doctest::Approx(-0.04).epsilon(1e-10));
    double naive = 0.0;
    int N = 256;
    double h = 1.0 / N;
    for (int k = 0; k <= N; ++k) {
        double x = -0.5 + k * h;
        double w = (k == 0 || k == N) ? 0.5 : 1.0;
        naive += w * h * sample_physical(sol, sol.dom.T, x)[0];
    }
    CHECK(std::abs(naive - (-0.04)) > 1e-5);
}

TEST_CASE("evaluate: domain guards") {
    auto sol = fan_solution(8, 8);
    double x1 = sol.curves.xi_at(1, sol.dom.T);
    CHECK_THROWS_AS(evaluate(norm_objective(x1, 0.5), sol), ShockOnBoundary);
    CHECK_THROWS_AS(evaluate(norm_objective(-2.0, 0.5), sol), ArgumentOutOfDomain);
    CHECK_THROWS_AS(evaluate(norm_objective(0.5, -0.5), sol), ArgumentOutOfDomain);
}

TEST_CASE("gradient: zero variation and pure-x0 translation invariance") {
    auto sol = fan_solution(16, 16);
    auto obj = norm_objective(-0.5, 0.5);
    CHECK(std::abs(gradient(obj, sol, const_variation(v2(0, 0), v2(0, 0), 0.0))) <=
          1e-12);
    // equal state norms across both shocks: jump terms cancel
    CHECK(std::abs(gradient(obj, sol, const_variation(v2(0, 0), v2(0, 0), 1.0))) <=
          1e-9);
}

TEST_CASE("gradient: matches central finite differences, 3 directions") {
    auto bp = burgers_pair();
    GrpParams params;
    Vec uL = v2(0.2, 0.1), uR = v2(-0.2, -0.1);
    auto dom = base_domain(16, 16);
    auto sol = solve_grp(bp, dom,
                         constant_control(uL, uR, 0.0, 0.05, 1.0, 0.25, 0.5), params);
    // continuous piecewise-linear target with a kink off the shocks
    auto yd = [](double x) {
        return v2(0.1 * x, x < 0.3 ? -0.05 * x + 0.02 : 0.01 * x + 0.002);
    };
    auto obj = tracking_objective(-0.5, 0.5, yd, {0.3});

    auto fd = [&](const ControlVariation& var) {
        double eps = 1e-4;
        auto at = [&](double e) {
            auto c = constant_control(Vec(uL + e * var.du_left(0.0)),
                                      Vec(uR + e * var.du_right(0.0)),
                                      e * var.dx0, 0.05, 1.0, 0.25, 0.5);
            return evaluate(obj, solve_grp(bp, dom, c, params));
        };
        return (at(eps) - at(-eps)) / (2.0 * eps);
    };

    std::vector<ControlVariation> dirs{
        const_variation(v2(1.0, 0.0), v2(0.0, 0.0), 0.0),
        const_variation(v2(0.0, 0.0), v2(0.3, -0.4), 0.0),
        const_variation(v2(0.2, -0.1), v2(0.1, 0.3), 0.5)};
    for (const auto& var : dirs) {
        double g = gradient(obj, sol, var);
        double f = fd(var);
        CHECK(std::abs(g - f) <= 1e-2 * std::max(1.0, std::abs(f)));
    }

    // superposition
    double g1 = gradient(obj, sol, dirs[0]);
    double g2 = gradient(obj, sol, dirs[2]);
    ControlVariation mix;
    mix.du_left = [](double) { return v2(0.7 * 1.0 - 1.3 * 0.2, 1.3 * 0.1); };
    mix.du_right = [](double) { return v2(-1.3 * 0.1, -1.3 * 0.3); };
    mix.dx0 = -1.3 * 0.5;
    CHECK(std::abs(gradient(obj, sol, mix) - (0.7 * g1 - 1.3 * g2)) <= 1e-9);
}

TEST_CASE("gradient: target breakpoint at a shock is rejected") {
    auto sol = fan_solution(8, 8);
    double x1 = sol.curves.xi_at(1, sol.dom.T);
    auto yd = [x1](double x) { return x < x1 ? v2(5.0, 5.0) : v2(0.0, 0.0); };
    auto obj = tracking_objective(-0.5, 0.5, yd, {x1});
    CHECK_THROWS_AS(gradient(obj, sol, const_variation(v2(0, 0), v2(0, 0), 1.0)),
                    TargetDiscontinuousAtShock);
}

TEST_CASE("directional_derivative: Frechet case agrees with the gradient") {
    auto sol = fan_solution(16, 16);
    auto yd = [](double x) { return v2(0.1 * x, -0.05 * x + 0.02); };
    auto obj = tracking_objective(-0.5, 0.5, yd);
    auto var = const_variation(v2(0.4, -0.2), v2(0.1, 0.3), 0.3);
    double g = gradient(obj, sol, var);
    double d = directional_derivative(obj, sol, var);
    // constant data: tangent, re-solves and quadrature are all exact here
    CHECK(std::abs(g - d) <= 1e-6 * std::max(1.0, std::abs(g)));
    CHECK(std::abs(directional_derivative(
              obj, sol, const_variation(v2(0, 0), v2(0, 0), 0.0))) <= 1e-12);
}

TEST_CASE("directional_derivative: kink inside the FD stencil is detected") {
    auto sol = fan_solution(16, 16);
    double x1 = sol.curves.xi_at(1, sol.dom.T);
    // large target jump just right of shock 1: the eps-step crosses it, the
    // eps/2-step does not, so the two quotients disagree
    double br = x1 + 7e-4;
    auto yd = [br](double x) { return x < br ? v2(5.0, 5.0) : v2(0.0, 0.0); };
    auto obj = tracking_objective(-0.5, 0.5, yd, {br});
    auto var = const_variation(v2(0, 0), v2(0, 0), 1.0);
    CHECK_THROWS_AS(directional_derivative(obj, sol, var, 1e-3),
                    NonConvergentQuotient);
}
