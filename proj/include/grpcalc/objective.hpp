#ifndef GRPCALC_OBJECTIVE_HPP
#define GRPCALC_OBJECTIVE_HPP

#include "grpcalc/sensitivity.hpp"

namespace grpcalc {

// ============================================================
// Tracking objective J(u) = int_a^b Phi(y(T,x), y_d(x)) dx
// ============================================================

struct TrackingObjective {
    double a = 0.0, b = 0.0;  // [a, b] inside the determinacy interval I_T
    std::function<double(const Vec& y, const Vec& yd)> phi;
    std::function<Vec(const Vec& y, const Vec& yd)> dphi_dy;
    std::function<Vec(double)> y_target;
    std::vector<double> target_breaks;  // discontinuity/kink points of y_target
};

namespace detail {

inline double objective_grid_h(const GrpSolution& sol) {
    return std::max(sol.dom.T / sol.dom.grid.M, sol.dom.ell / sol.dom.grid.P);
}

// segment cuts: interval ends, shocks and target breakpoints inside (a, b)
inline std::vector<double> objective_cuts(const TrackingObjective& obj,
                                          const GrpSolution& sol, double t) {
    std::vector<double> cuts{obj.a, obj.b};
    for (int c = 1; c <= sol.dom.n; ++c) {
        double x = sol.curves.xi_at(c, t);
        if (x > obj.a && x < obj.b) cuts.push_back(x);
    }
    for (double x : obj.target_breaks)
        if (x > obj.a && x < obj.b) cuts.push_back(x);
    std::sort(cuts.begin(), cuts.end());
    return cuts;
}

inline void objective_domain_checks(const TrackingObjective& obj,
                                    const GrpSolution& sol) {
    double lo = -sol.dom.ell + sol.model.lambda_max * sol.dom.T;
    double hi = sol.dom.ell - sol.model.lambda_max * sol.dom.T;
    if (!(obj.a < obj.b) || obj.a < lo - 1e-12 || obj.b > hi + 1e-12)
        throw ArgumentOutOfDomain("objective window outside the determinacy interval");
    double h = objective_grid_h(sol);
    for (int c = 1; c <= sol.dom.n; ++c) {
        double x = sol.curves.xi_at(c, sol.dom.T);
        if (std::abs(x - obj.a) < h || std::abs(x - obj.b) < h)
            throw ShockOnBoundary("shock within h of an objective endpoint");
    }
}

// shock-split composite trapezoid; endpoints are nudged inward so one-sided
// limits at the cuts are unambiguous
template <typename F>
double split_trapezoid(const std::vector<double>& cuts, int per_seg, F&& f) {
    double acc = 0.0;
    for (size_t s = 0; s + 1 < cuts.size(); ++s) {
        double a = cuts[s], b = cuts[s + 1];
        if (b - a <= 1e-14) continue;
        double h = (b - a) / per_seg;
        for (int k = 0; k <= per_seg; ++k) {
            double x = a + k * h;
            if (k == 0) x += 1e-10;
            if (k == per_seg) x -= 1e-10;
            double w = (k == 0 || k == per_seg) ? 0.5 : 1.0;
            acc += w * h * f(x);
        }
    }
    return acc;
}

} // namespace detail

inline double evaluate(const TrackingObjective& obj, const GrpSolution& sol,
                       int quad_per_segment = 256) {
    detail::objective_domain_checks(obj, sol);
    auto cuts = detail::objective_cuts(obj, sol, sol.dom.T);
    return detail::split_trapezoid(cuts, quad_per_segment, [&](double x) {
        return obj.phi(sample_physical(sol, sol.dom.T, x), obj.y_target(x));
    });
}

// dJ . du = int dPhi/dy^T delta-y dx + sum_j dxi_j(T) [Phi(y-, yd) - Phi(y+, yd)]
inline double gradient(const TrackingObjective& obj, const GrpSolution& sol,
                       const SensitivityBundle& bundle, int quad_per_segment = 256) {
    detail::objective_domain_checks(obj, sol);
    double T = sol.dom.T, h = detail::objective_grid_h(sol);
    for (int c = 1; c <= sol.dom.n; ++c) {
        double x = sol.curves.xi_at(c, T);
        for (double br : obj.target_breaks)
            if (std::abs(br - x) < h)
                throw TargetDiscontinuousAtShock(
                    "target breakpoint within h of a shock; use "
                    "directional_derivative");
    }
    auto cuts = detail::objective_cuts(obj, sol, T);
    double smooth = detail::split_trapezoid(cuts, quad_per_segment, [&](double x) {
        Vec y = sample_physical(sol, T, x);
        Vec dy = detail::physical_sensitivity_raw(sol, bundle, T, x);
        return obj.dphi_dy(y, obj.y_target(x)).dot(dy);
    });
    double jumps = 0.0;
    for (int c = 1; c <= sol.dom.n; ++c) {
        double x = sol.curves.xi_at(c, T);
        if (x <= obj.a || x >= obj.b) continue;
        Vec ym = sol.ybar.eval_sigma(c - 1, T, 1.0);
        Vec yp = sol.ybar.eval_sigma(c, T, 0.0);
        Vec yd = obj.y_target(x);
        jumps += sol.curves.interp(bundle.dxi[c], T) *
                 (obj.phi(ym, yd) - obj.phi(yp, yd));
    }
    return smooth + jumps;
}

inline double gradient(const TrackingObjective& obj, const GrpSolution& sol,
                       const ControlVariation& variation,
                       int quad_per_segment = 256) {
    return gradient(obj, sol, solve_sensitivity(sol, variation), quad_per_segment);
}

// Numerical directional derivative: Richardson-checked central differences of
// re-solved objectives.  Covers targets that are discontinuous at shocks,
// where only one-sided derivatives exist.
inline double directional_derivative(const TrackingObjective& obj,
                                     const GrpSolution& sol,
                                     const ControlVariation& variation,
                                     double eps = 1e-3) {
    int n = sol.model.n;
    auto zero_fn = [n](double) { return Vec::Zero(n); };
    std::function<Vec(double)> dl =
        variation.du_left ? variation.du_left : std::function<Vec(double)>(zero_fn);
    std::function<Vec(double)> dr =
        variation.du_right ? variation.du_right : std::function<Vec(double)>(zero_fn);
    auto at = [&](double e) {
        Control c = sol.control;
        c.u_left = [base = sol.control.u_left, dl, e](double x) {
            return Vec(base(x) + e * dl(x));
        };
        c.u_right = [base = sol.control.u_right, dr, e](double x) {
            return Vec(base(x) + e * dr(x));
        };
        c.x0 = sol.control.x0 + e * variation.dx0;
        ReferenceDomain dom = sol.dom;
        return evaluate(obj, solve_grp(sol.model, dom, c, sol.params));
    };
    auto central = [&](double e) { return (at(e) - at(-e)) / (2.0 * e); };
    double d1 = central(eps), d2 = central(0.5 * eps);
    if (std::abs(d1 - d2) > 0.05 * std::max(1.0, std::abs(d2)))
        throw NonConvergentQuotient("Richardson difference quotients disagree");
    return (4.0 * d2 - d1) / 3.0;
}

} // namespace grpcalc

#endif // GRPCALC_OBJECTIVE_HPP
