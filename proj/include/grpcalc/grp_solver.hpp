#ifndef GRPCALC_GRP_SOLVER_HPP
#define GRPCALC_GRP_SOLVER_HPP

#include "grpcalc/broad_solution.hpp"

namespace grpcalc {

// ============================================================
// Quasilinear generalized Riemann problem in reference space
// ============================================================

struct GrpParams {
    double outer_tol = 1e-8;
    int outer_max = 50;
    double inner_tol = 1e-10;
    int inner_max = 200;
    int jobs = 1;
    double c_y = 0.0;  // a-priori solution bound; 0 = derive from fan and source
};

struct GrpDiagnostics {
    std::vector<double> outer_residuals;
    std::vector<int> inner_iterations;
    double c_y = 0.0;
};

struct GrpSolution {
    SystemModel model;
    Control control;
    GrpParams params;
    ReferenceDomain dom;
    RiemannFan fan;  // principal part
    double x0 = 0.0;
    PiecewiseField ybar, ybar_x;
    CurveFamily curves;
    GrpDiagnostics diagnostics;
};

// ============================================================
// Dilation of the initial data onto the reference half-lines
// ============================================================

struct DilatedData {
    std::function<Vec(double)> ul, ur, ul_deriv, ur_deriv;
};

// ul lives on [-ell, 0], ur on [0, ell]; the dilation pulls the control data
// (anchored at x0) back to the reference origin, stretching by (1 +- x0/ell).
inline DilatedData dilate_initial(const Control& control) {
    double x0 = control.x0, ell = control.ell, eps = control.eps;
    if (std::abs(x0) >= eps || eps > ell / 6.0 + 1e-12)
        throw ArgumentOutOfDomain("dilate_initial needs |x0| < eps <= ell/6");
    DilatedData d;
    auto arg_l = [x0, ell, eps](double xb) {
        if (xb < -ell - 1e-9 || xb > 1e-9)
            throw ArgumentOutOfDomain("left reference argument outside [-ell, 0]");
        double a = xb + (xb + ell) / ell * x0;
        if (a < -ell - 1e-9 || a > eps + 1e-9)
            throw ArgumentOutOfDomain("dilated left argument outside [-ell, eps]");
        return a;
    };
    auto arg_r = [x0, ell, eps](double xb) {
        if (xb < -1e-9 || xb > ell + 1e-9)
            throw ArgumentOutOfDomain("right reference argument outside [0, ell]");
        double a = xb - (xb - ell) / ell * x0;
        if (a < -eps - 1e-9 || a > ell + 1e-9)
            throw ArgumentOutOfDomain("dilated right argument outside [-eps, ell]");
        return a;
    };
    d.ul = [f = control.u_left, arg_l](double xb) { return f(arg_l(xb)); };
    d.ur = [f = control.u_right, arg_r](double xb) { return f(arg_r(xb)); };
    d.ul_deriv = [f = control.u_left_deriv, arg_l, x0, ell](double xb) {
        return Vec((1.0 + x0 / ell) * f(arg_l(xb)));
    };
    d.ur_deriv = [f = control.u_right_deriv, arg_r, x0, ell](double xb) {
        return Vec((1.0 - x0 / ell) * f(arg_r(xb)));
    };
    return d;
}

// ============================================================
// Rankine-Hugoniot interior boundary operator G_i^c
// ============================================================

// Outgoing characteristic component behind shock c from the transported
// incoming component plus jump corrections.  Frames (l, r, averaged l_i) are
// evaluated at (zL, zR); the jump values use (vL, vR) — at a converged
// solution the two coincide.  Fields are zero-based, shocks 1-based; fast
// fields (i >= c) receive on the right, slow fields (i <= c-2) on the left.
inline double grp_boundary_G(const SystemModel& model, int i, int c,
                             double transported, const Vec& vL, const Vec& vR,
                             const Vec& zL, const Vec& zR) {
    bool fast = i >= c, slow = i <= c - 2;
    if (!fast && !slow)
        throw ConfigError("grp_boundary_G: no condition for the shock's own field");
    auto decL = eigen_decompose(model, zL);
    auto decR = eigen_decompose(model, zR);
    auto avg = averaged_eigen(model, zL, zR);
    Vec li_avg = avg.left.row(i);
    const EigenDecomposition& near = fast ? decR : decL;
    double den = li_avg.dot(near.right.col(i));
    if (std::abs(den) < 0.5)
        throw DenominatorTooSmall("|l_i(vL,vR)^T r_i| < 1/2 in grp_boundary_G");
    Vec jump = vR - vL;
    double g = transported;
    if (fast) {
        g += (decR.left.row(i) - decL.left.row(i)).dot(vL);
        for (int k = 0; k < model.n; ++k) {
            if (k == i) continue;
            g -= li_avg.dot(decR.right.col(k)) / den * decR.left.row(k).dot(jump);
        }
    } else {
        g += (decL.left.row(i) - decR.left.row(i)).dot(vR);
        for (int k = 0; k < model.n; ++k) {
            if (k == i) continue;
            g += li_avg.dot(decL.right.col(k)) / den * decL.left.row(k).dot(jump);
        }
    }
    return g;
}

inline double grp_boundary_G(const SystemModel& model, int i, int c,
                             double transported, const Vec& vL, const Vec& vR) {
    return grp_boundary_G(model, i, c, transported, vL, vR, vL, vR);
}

// ============================================================
// Outer Picard loop
// ============================================================

namespace detail {

inline double sample_source_bound(const SystemModel& model, double T, double ell) {
    double g = 0.0;
    for (double t : {0.0, 0.5 * T, T})
        for (double x : {-ell, 0.0, ell})
            for (int a = -1; a <= 1; ++a)
                for (int b = -1; b <= 1; ++b) {
                    Vec y = model.box_center;
                    y[0] += a * model.box_radius;
                    if (model.n > 1) y[1] += b * model.box_radius;
                    g = std::max(g, model.source(t, x, y).cwiseAbs().maxCoeff());
                }
    return g;
}

inline SemilinearProblem make_inner_problem(const GrpSolution& sol,
                                            const PiecewiseField& z,
                                            const DilatedData& data, int jobs) {
    SemilinearProblem pb;
    pb.model = &sol.model;
    pb.dom = sol.dom;
    pb.x0 = sol.x0;
    pb.zbar = z;
    pb.curves = build_curves(sol.dom, sol.model, z, sol.x0);
    pb.jobs = jobs;
    pb.init_left = data.ul;
    pb.init_right = data.ur;
    const SystemModel* model = pb.model;
    ReferenceDomain dom = pb.dom;
    CurveFamily curves = pb.curves;
    pb.source = [model, dom, curves](const PiecewiseField& v, PiecewiseField& S) {
        int M = dom.grid.M, P = dom.grid.P;
        double dt = dom.dt();
        for (int j = 0; j < dom.sectors(); ++j)
            for (int m = 0; m <= M; ++m) {
                double t = m * dt;
                for (int p = 0; p <= P; ++p) {
                    double xb = dom.sector_left(j, t) +
                                dom.sector_width(j, t) * p / P;
                    double x = to_physical(dom, curves, j, t, xb);
                    S.at(j, m, p) = model->source(t, x, v.at(j, m, p));
                }
            }
    };
    PiecewiseField zc = z;  // frozen traces for the G frames
    pb.boundary_op = [model, zc](int i, int c, double t, double transported,
                                 const Vec& vL, const Vec& vR) {
        Vec zL = zc.eval_sigma(c - 1, t, 1.0);
        Vec zR = zc.eval_sigma(c, t, 0.0);
        return grp_boundary_G(*model, i, c, transported, vL, vR, zL, zR);
    };
    return pb;
}

} // namespace detail

inline GrpSolution solve_grp(const SystemModel& model, ReferenceDomain dom,
                             const Control& control, const GrpParams& params) {
    GrpSolution sol;
    sol.model = model;
    sol.control = control;
    sol.params = params;
    sol.x0 = control.x0;

    DilatedData data = dilate_initial(control);
    Vec uL = data.ul(0.0), uR = data.ur(0.0);  // nominal pair u(x0 -/+)
    auto adm = validate_admissible_set(model, control, uL, uR, 9);
    if (!adm.pass)
        throw ConfigError("control not admissible: " + adm.failures.front().second);
    sol.fan = solve_riemann(model, uL, uR);

    dom.n = model.n;
    dom.speeds = sol.fan.speeds;
    dom.lambda_max = model.lambda_max;
    dom.validate();
    sol.dom = dom;

    PiecewiseField z(dom, model.n);
    for (int j = 0; j < dom.sectors(); ++j)
        for (auto& v : z.vals[j]) v = sol.fan.states[j];

    auto wd = check_welldefinedness(dom, model, z, sol.x0, sol.fan, control.M1);
    if (!wd.pass)
        throw DegenerateGeometry("well-definedness failed: " + wd.violations.front());

    double gmax = detail::sample_source_bound(model, dom.T, dom.ell);
    double fan_norm = 0.0;
    for (const Vec& s : sol.fan.states)
        fan_norm = std::max(fan_norm, s.cwiseAbs().maxCoeff());
    sol.diagnostics.c_y =
        params.c_y > 0.0 ? params.c_y : 2.0 * (fan_norm + dom.T * gmax);

    int jobs = params.jobs >= 1 ? params.jobs : default_jobs();
    bool converged = false;
    for (int outer = 0; outer < params.outer_max; ++outer) {
        SemilinearProblem pb = detail::make_inner_problem(sol, z, data, jobs);
        try {
            pb.prepare();
            BroadResult inner = solve_broad(pb, z, params.inner_tol, params.inner_max);
            if (inner.ybar.pc0_norm() > sol.diagnostics.c_y)
                throw OuterDivergence("iterate exceeded the a-priori bound c_y");
            double r = inner.ybar.pc0_distance(z);
            sol.diagnostics.outer_residuals.push_back(r);
            sol.diagnostics.inner_iterations.push_back(
                static_cast<int>(inner.residuals.size()));
            z = std::move(inner.ybar);
            if (r <= params.outer_tol) {
                converged = true;
                break;
            }
        } catch (const OuterDivergence&) {
            throw;
        } catch (const Error& e) {
            throw OuterDivergence("outer iteration " + std::to_string(outer + 1) +
                                  ": " + e.what());
        }
    }
    if (!converged)
        throw OuterDivergence("outer Picard residual above tol after " +
                              std::to_string(params.outer_max) + " iterations");
    sol.ybar = std::move(z);
    sol.curves = build_curves(dom, model, sol.ybar, sol.x0);
    sol.ybar_x = field_xbar_derivative(sol.ybar);
    return sol;
}

// ============================================================
// Physical-coordinate sampling
// ============================================================

// Sector lookup by the curve positions; ties resolve to the right sector, so
// on a shock the right limit is returned.
inline Vec sample_physical(const GrpSolution& sol, double t, double x) {
    const ReferenceDomain& dom = sol.dom;
    if (t < -1e-12 || t > dom.T + 1e-12)
        throw OutsidePhysicalDomain("t outside [0, T]");
    t = std::clamp(t, 0.0, dom.T);
    double xl = sol.curves.xi_at(0, t), xr = sol.curves.xi_at(dom.n + 1, t);
    if (x < xl - 1e-12 || x > xr + 1e-12)
        throw OutsidePhysicalDomain("x outside the determinacy domain");
    x = std::clamp(x, xl, xr);
    int j = 0;
    for (int c = 1; c <= dom.n; ++c)
        if (x >= sol.curves.xi_at(c, t)) j = c;
    double xbar = dom.sector_width(j, t) <= 1e-14
                      ? 0.0
                      : to_reference(dom, sol.curves, j, t, x);
    return sol.ybar.eval(j, t, xbar);
}

// ============================================================
// Entropy / Rankine-Hugoniot diagnostics
// ============================================================

struct EntropyRhReport {
    bool pass = true;
    double rh_tol = 0.0, entropy_tol = 0.0;
    double max_rh = 0.0;
    double min_own_margin = 0.0;    // min over shocks of min(lam(y-)-s, s-lam(y+))
    double min_cross_margin = 0.0;  // min over cross fields of |lam - s| signed
    std::vector<std::vector<double>> rh;          // [shock][time level]
    std::vector<std::vector<double>> own_margin;  // [shock][time level]
};

inline EntropyRhReport entropy_and_rh_report(const GrpSolution& sol) {
    const ReferenceDomain& dom = sol.dom;
    const SystemModel& model = sol.model;
    int M = dom.grid.M, P = dom.grid.P;
    EntropyRhReport rep;
    rep.rh_tol = 5.0 * std::max(dom.T / M, dom.ell / P);
    rep.entropy_tol = 1e-8;
    rep.min_own_margin = std::numeric_limits<double>::infinity();
    rep.min_cross_margin = std::numeric_limits<double>::infinity();
    rep.rh.assign(dom.n, std::vector<double>(M + 1));
    rep.own_margin.assign(dom.n, std::vector<double>(M + 1));
    for (int c = 1; c <= dom.n; ++c)
        for (int m = 0; m <= M; ++m) {
            const Vec& ym = sol.ybar.at(c - 1, m, P);
            const Vec& yp = sol.ybar.at(c, m, 0);
            double s = sol.curves.xi_dot[c][m];
            double rh = (s * (yp - ym) - (model.flux(yp) - model.flux(ym)))
                            .cwiseAbs()
                            .maxCoeff();
            rep.rh[c - 1][m] = rh;
            rep.max_rh = std::max(rep.max_rh, rh);
            double lm = eigen_decompose(model, ym).lambdas[c - 1];
            double lp = eigen_decompose(model, yp).lambdas[c - 1];
            double own = std::min(lm - s, s - lp);
            rep.own_margin[c - 1][m] = own;
            rep.min_own_margin = std::min(rep.min_own_margin, own);
            for (int i = 0; i < model.n; ++i) {
                if (i == c - 1) continue;
                for (const Vec* y : {&ym, &yp}) {
                    double lam = eigen_decompose(model, *y).lambdas[i];
                    double cross = i > c - 1 ? lam - s : s - lam;
                    rep.min_cross_margin = std::min(rep.min_cross_margin, cross);
                }
            }
        }
    rep.pass = rep.max_rh <= rep.rh_tol &&
               rep.min_own_margin >= -rep.entropy_tol &&
               rep.min_cross_margin > 0.0;
    return rep;
}

// ============================================================
// Derivative-system residual at the shocks (consistency check)
// ============================================================

struct DerivBoundaryReport {
    double max_residual = 0.0;
    std::vector<std::vector<double>> residual;  // [shock][interior time level]
};

// Checks the node condition ybar_{i,x} = K_i on the shock traces of the
// converged solution: the outgoing derivative component behind each shock is
// determined by the incoming one through the differentiated jump relation.
// Discrete traces and FD partials of G make this an O(h) consistency report.
inline DerivBoundaryReport derivative_boundary_residual(const GrpSolution& sol) {
    const ReferenceDomain& dom = sol.dom;
    const SystemModel& model = sol.model;
    int M = dom.grid.M, P = dom.grid.P, n = model.n;
    double dt = dom.dt();
    PiecewiseField yt = field_t_derivative(sol.ybar, sol.ybar_x);

    DerivBoundaryReport rep;
    rep.residual.assign(dom.n, std::vector<double>(std::max(0, M - 1), 0.0));
    for (int c = 1; c <= dom.n; ++c) {
        double s = dom.edge_slope(c);
        for (int m = 1; m < M; ++m) {
            double t = m * dt;
            Vec zL = sol.ybar.at(c - 1, m, P), zR = sol.ybar.at(c, m, 0);
            Vec zxL = sol.ybar_x.at(c - 1, m, P), zxR = sol.ybar_x.at(c, m, 0);
            Vec ztL = yt.at(c - 1, m, P), ztR = yt.at(c, m, 0);
            auto decL = eigen_decompose(model, zL);
            auto decR = eigen_decompose(model, zR);
            TransformDerivs dL = transform_derivatives_sigma(dom, sol.curves, c - 1,
                                                             t, 1.0);
            TransformDerivs dR = transform_derivatives_sigma(dom, sol.curves, c, t,
                                                             0.0);
            double x_shock = sol.curves.xi_at(c, t);
            Vec fL = model.source(t, x_shock, zL);
            Vec fR = model.source(t, x_shock, zR);
            Mat AbarL = (model.flux_jacobian(zL) - dL.x_t * Mat::Identity(n, n)) /
                        dL.x_xbar;
            Mat AbarR = (model.flux_jacobian(zR) - dR.x_t * Mat::Identity(n, n)) /
                        dR.x_xbar;
            double worst = 0.0;
            for (int i = 0; i < n; ++i) {
                if (i == c - 1) continue;
                bool fast = i >= c;
                // receiving ("out") side and incoming ("in") side of shock c
                const Vec &zo = fast ? zR : zL, &zi = fast ? zL : zR;
                const Vec &zxo = fast ? zxR : zxL, &zxi = fast ? zxL : zxR;
                const Vec &zto = fast ? ztR : ztL, &zti = fast ? ztL : ztR;
                const Vec &fo = fast ? fR : fL, &fi_src = fast ? fL : fR;
                const TransformDerivs &do_ = fast ? dR : dL, &di = fast ? dL : dR;
                const EigenDecomposition &deco = fast ? decR : decL,
                                         &deci = fast ? decL : decR;
                double lam_o = do_.xbar_t + do_.xbar_x * deco.lambdas[i];
                double lam_i = di.xbar_t + di.xbar_x * deci.lambdas[i];
                double v_in = deci.left.row(i).dot(zxi);
                double lhs = deco.left.row(i).dot(zxo);

                double v0 = deci.left.row(i).dot(zi);
                auto F = [&](double v, const Vec& vl, const Vec& vr, const Vec& frL,
                             const Vec& frR) {
                    return grp_boundary_G(model, i, c, v, vl, vr, frL, frR);
                };
                double d = 1e-6;
                double dF2 =
                    (F(v0 + d, zL, zR, zL, zR) - F(v0 - d, zL, zR, zL, zR)) /
                    (2.0 * d);
                Vec dF3(n), dF4(n);
                for (int r = 0; r < n; ++r) {
                    Vec e = Vec::Zero(n);
                    e[r] = d;
                    dF3[r] = (F(v0, zL + e, zR, zL, zR) -
                              F(v0, zL - e, zR, zL, zR)) / (2.0 * d);
                    dF4[r] = (F(v0, zL, zR + e, zL, zR) -
                              F(v0, zL, zR - e, zL, zR)) / (2.0 * d);
                }
                Vec zLp = sol.ybar.at(c - 1, m + 1, P), zRp = sol.ybar.at(c, m + 1, 0);
                Vec zLm = sol.ybar.at(c - 1, m - 1, P), zRm = sol.ybar.at(c, m - 1, 0);
                double Ft = (F(v0, zL, zR, zLp, zRp) - F(v0, zL, zR, zLm, zRm)) /
                            (2.0 * dt);

                Mat glo = grad_left_eigenvector(model, i, zo);
                Mat gli = grad_left_eigenvector(model, i, zi);
                double bracket =
                    -(glo * (zto + s * zxo)).dot(zo) - deco.left.row(i).dot(fo) + Ft +
                    dF2 * ((gli * (zti + s * zxi)).dot(zi) +
                           deci.left.row(i).dot(fi_src) + (s - lam_i) * v_in) +
                    dF3.dot(fL + (s * Mat::Identity(n, n) - AbarL) * zxL) +
                    dF4.dot(fR + (s * Mat::Identity(n, n) - AbarR) * zxR);
                double K = bracket / (s - lam_o);
                worst = std::max(worst, std::abs(lhs - K));
            }
            rep.residual[c - 1][m - 1] = worst;
            rep.max_residual = std::max(rep.max_residual, worst);
        }
    }
    return rep;
}

} // namespace grpcalc

#endif // GRPCALC_GRP_SOLVER_HPP
