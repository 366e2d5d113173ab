#ifndef GRPCALC_SENSITIVITY_HPP
#define GRPCALC_SENSITIVITY_HPP

#include <memory>

#include "grpcalc/grp_solver.hpp"

namespace grpcalc {

// ============================================================
// First-order sensitivities of the GRP solution operator
// ============================================================

struct ControlVariation {
    std::function<Vec(double)> du_left, du_right;  // C1 perturbations of u_l, u_r
    double dx0 = 0.0;
};

struct SensitivityBundle {
    ControlVariation variation;
    PiecewiseField dybar;                      // delta-ybar on the sector grid
    std::vector<std::vector<double>> dxi;      // [curve][m], curves 0..n+1
    std::vector<std::vector<double>> dxi_dot;  // curve-speed variations
    std::vector<double> residuals;             // kernel residual history
};

namespace detail {

// Pointwise curve-speed variation coefficients: boundary curves follow the
// extreme one-sided eigenvalues, shock curves the averaged eigenvalue.
struct CurveGradTables {
    // boundary curves: single row per time level; shocks: (left, right) rows
    std::vector<Vec> left0, rightN;                       // [m]
    std::vector<std::vector<std::pair<Vec, Vec>>> shock;  // [c-1][m]
};

inline CurveGradTables curve_grad_tables(const GrpSolution& sol) {
    const ReferenceDomain& dom = sol.dom;
    int n = sol.model.n, M = dom.grid.M, P = dom.grid.P;
    CurveGradTables tab;
    tab.left0.resize(M + 1);
    tab.rightN.resize(M + 1);
    tab.shock.assign(dom.n, std::vector<std::pair<Vec, Vec>>(M + 1));
    for (int m = 0; m <= M; ++m) {
        tab.left0[m] = grad_lambda(sol.model, n - 1, sol.ybar.at(0, m, 0));
        tab.rightN[m] = grad_lambda(sol.model, 0, sol.ybar.at(dom.n, m, P));
        for (int c = 1; c <= dom.n; ++c)
            tab.shock[c - 1][m] = grad_averaged_lambda(
                sol.model, c - 1, sol.ybar.at(c - 1, m, P), sol.ybar.at(c, m, 0));
    }
    return tab;
}

// delta-xi and delta-xi-dot for the current delta-ybar iterate: the reference
// edges are fixed lines, so the trace variation is the field variation alone;
// shocks carry the dx0 start offset, boundary curves start at -/+ell exactly.
inline void curve_variations(const GrpSolution& sol, const CurveGradTables& tab,
                             const PiecewiseField& dv, double dx0,
                             std::vector<std::vector<double>>& dxi,
                             std::vector<std::vector<double>>& dxi_dot) {
    const ReferenceDomain& dom = sol.dom;
    int M = dom.grid.M, P = dom.grid.P;
    double dt = dom.dt();
    dxi.assign(dom.n + 2, std::vector<double>(M + 1, 0.0));
    dxi_dot.assign(dom.n + 2, std::vector<double>(M + 1, 0.0));
    for (int m = 0; m <= M; ++m) {
        dxi_dot[0][m] = tab.left0[m].dot(dv.at(0, m, 0));
        dxi_dot[dom.n + 1][m] = tab.rightN[m].dot(dv.at(dom.n, m, P));
        for (int c = 1; c <= dom.n; ++c)
            dxi_dot[c][m] = tab.shock[c - 1][m].first.dot(dv.at(c - 1, m, P)) +
                            tab.shock[c - 1][m].second.dot(dv.at(c, m, 0));
    }
    for (int c = 0; c <= dom.n + 1; ++c) {
        dxi[c][0] = (c >= 1 && c <= dom.n) ? dx0 : 0.0;
        for (int m = 1; m <= M; ++m)
            dxi[c][m] = dxi[c][m - 1] + 0.5 * dt * (dxi_dot[c][m - 1] + dxi_dot[c][m]);
    }
}

// static per-node data of the linearized coefficient problem
struct SensitivityWorkspace {
    GrpSolution sol;  // copy keeps the closure self-contained
    CurveGradTables tables;
    double dx0 = 0.0;
    // per node: transform derivatives, physical x, Abar * ybar_x
    std::vector<std::vector<TransformDerivs>> der;  // [sector][node]
    std::vector<std::vector<double>> xphys;
    std::vector<std::vector<Vec>> abar_yx;
    // boundary tables per (shock, field, time level)
    struct BoundaryRow {
        double dF2 = 0.0;
        Vec dF3, dF4, corr;  // corr pairs with the receiving-side trace
    };
    std::vector<std::vector<std::vector<BoundaryRow>>> brow;  // [c-1][i][m]
};

inline std::shared_ptr<SensitivityWorkspace> make_sensitivity_workspace(
    const GrpSolution& sol, double dx0) {
    auto ws = std::make_shared<SensitivityWorkspace>();
    ws->sol = sol;
    ws->dx0 = dx0;
    ws->tables = curve_grad_tables(sol);
    const ReferenceDomain& dom = sol.dom;
    const SystemModel& model = sol.model;
    int n = model.n, M = dom.grid.M, P = dom.grid.P;
    int per_sector = (M + 1) * (P + 1);
    double dt = dom.dt();
    ws->der.assign(dom.sectors(), std::vector<TransformDerivs>(per_sector));
    ws->xphys.assign(dom.sectors(), std::vector<double>(per_sector));
    ws->abar_yx.assign(dom.sectors(), std::vector<Vec>(per_sector));
    for (int j = 0; j < dom.sectors(); ++j)
        for (int node = 0; node < per_sector; ++node) {
            int m = node / (P + 1), p = node % (P + 1);
            double t = m * dt, sigma = static_cast<double>(p) / P;
            double xb = dom.sector_left(j, t) + sigma * dom.sector_width(j, t);
            TransformDerivs d = transform_derivatives_sigma(dom, sol.curves, j, t,
                                                            sigma);
            ws->der[j][node] = d;
            ws->xphys[j][node] = to_physical(dom, sol.curves, j, t, xb);
            const Vec& y = sol.ybar.at(j, m, p);
            const Vec& yx = sol.ybar_x.at(j, m, p);
            Mat Abar = (model.flux_jacobian(y) - d.x_t * Mat::Identity(n, n)) /
                       d.x_xbar;
            ws->abar_yx[j][node] = Abar * yx;
        }

    // boundary-operator partials by central FD at the converged traces
    ws->brow.assign(dom.n, std::vector<std::vector<SensitivityWorkspace::BoundaryRow>>(
                               n, std::vector<SensitivityWorkspace::BoundaryRow>(M + 1)));
    double d = 1e-6;
    for (int c = 1; c <= dom.n; ++c)
        for (int m = 0; m <= M; ++m) {
            Vec zL = sol.ybar.at(c - 1, m, P), zR = sol.ybar.at(c, m, 0);
            for (int i = 0; i < n; ++i) {
                if (i == c - 1) continue;
                bool fast = i >= c;
                const Vec& zrecv = fast ? zR : zL;
                const Vec& zin = fast ? zL : zR;
                double v0 = eigen_decompose(model, zin).left.row(i).dot(zin);
                auto& row = ws->brow[c - 1][i][m];
                // live-frame partials: the trace arguments carry the frames too
                row.dF2 = (grp_boundary_G(model, i, c, v0 + d, zL, zR) -
                           grp_boundary_G(model, i, c, v0 - d, zL, zR)) /
                          (2.0 * d);
                row.dF3 = Vec(n);
                row.dF4 = Vec(n);
                for (int r = 0; r < n; ++r) {
                    Vec e = Vec::Zero(n);
                    e[r] = d;
                    row.dF3[r] =
                        (grp_boundary_G(model, i, c, v0, Vec(zL + e), zR) -
                         grp_boundary_G(model, i, c, v0, Vec(zL - e), zR)) /
                        (2.0 * d);
                    row.dF4[r] =
                        (grp_boundary_G(model, i, c, v0, zL, Vec(zR + e)) -
                         grp_boundary_G(model, i, c, v0, zL, Vec(zR - e))) /
                        (2.0 * d);
                }
                row.corr = grad_left_eigenvector(model, i, zrecv).transpose() * zrecv;
            }
        }
    return ws;
}

} // namespace detail

// ============================================================
// Tangent solve
// ============================================================

inline SensitivityBundle solve_sensitivity(const GrpSolution& sol,
                                           const ControlVariation& variation) {
    if (sol.ybar_x.n_comp == 0)
        throw MissingDerivativeField("solve_sensitivity needs ybar_x");
    const ReferenceDomain& dom = sol.dom;
    const SystemModel& model = sol.model;
    int n = model.n, M = dom.grid.M, P = dom.grid.P;
    auto ws = detail::make_sensitivity_workspace(sol, variation.dx0);

    SemilinearProblem pb;
    pb.model = &ws->sol.model;
    pb.dom = dom;
    pb.x0 = sol.x0;
    pb.zbar = sol.ybar;
    pb.curves = sol.curves;
    pb.jobs = sol.params.jobs >= 1 ? sol.params.jobs : default_jobs();

    // variational initial data: dilated du plus the dilation's x0-derivative
    double ell = dom.ell, x0 = sol.x0, dx0 = variation.dx0;
    DilatedData base = dilate_initial(sol.control);
    Control vctrl = sol.control;
    auto zero_fn = [n](double) { return Vec::Zero(n); };
    vctrl.u_left = variation.du_left ? variation.du_left
                                     : std::function<Vec(double)>(zero_fn);
    vctrl.u_right = variation.du_right ? variation.du_right
                                       : std::function<Vec(double)>(zero_fn);
    vctrl.u_left_deriv = [n](double) { return Vec::Zero(n); };
    vctrl.u_right_deriv = [n](double) { return Vec::Zero(n); };
    DilatedData vdata = dilate_initial(vctrl);
    // dilate_initial folds the chain factor (1 +- x0/ell) into the derivative;
    // here the plain dilated u' is needed, so divide it back out
    pb.init_left = [vdata, base, ell, x0, dx0](double xb) {
        return Vec(vdata.ul(xb) + base.ul_deriv(xb) / (1.0 + x0 / ell) *
                                      ((xb + ell) / ell) * dx0);
    };
    pb.init_right = [vdata, base, ell, x0, dx0](double xb) {
        return Vec(vdata.ur(xb) - base.ur_deriv(xb) / (1.0 - x0 / ell) *
                                      ((xb - ell) / ell) * dx0);
    };

    // linearized interior boundary conditions from the FD tables
    pb.boundary_op = [ws, M](int i, int c, double t, double transported,
                             const Vec& vL, const Vec& vR) {
        double dt = ws->sol.dom.dt();
        double tau = std::clamp(t / dt, 0.0, static_cast<double>(M));
        int m = std::min(static_cast<int>(tau), M - 1);
        double w = tau - m;
        auto blend = [&](auto&& get) { return (1.0 - w) * get(m) + w * get(m + 1); };
        const auto& rows = ws->brow[c - 1][i];
        double b = blend([&](int mm) { return rows[mm].dF2; }) * transported;
        bool fast = i >= c;
        const Vec& vrecv = fast ? vR : vL;
        for (int r = 0; r < static_cast<int>(vL.size()); ++r) {
            b += blend([&](int mm) { return rows[mm].dF3[r]; }) * vL[r];
            b += blend([&](int mm) { return rows[mm].dF4[r]; }) * vR[r];
            b -= blend([&](int mm) { return rows[mm].corr[r]; }) * vrecv[r];
        }
        return b;
    };

    // source: a(dv) = d g_bar . (dv, dx0) - (d Abar . (dv, dx0)) ybar_x
    pb.source = [ws](const PiecewiseField& dv, PiecewiseField& S) {
        const GrpSolution& sol = ws->sol;
        const ReferenceDomain& dom = sol.dom;
        const SystemModel& model = sol.model;
        int n = model.n, M = dom.grid.M, P = dom.grid.P;
        double dt = dom.dt();
        std::vector<std::vector<double>> dxi, dxi_dot;
        detail::curve_variations(sol, ws->tables, dv, ws->dx0, dxi, dxi_dot);
        for (int j = 0; j < dom.sectors(); ++j) {
            double a = dom.edge_slope(j), dd = dom.edge_slope(j + 1) - a;
            for (int m = 0; m <= M; ++m) {
                double t = m * dt;
                double W = dom.sector_width(j, t);
                double dxx;
                if (W <= 1e-14)  // collapsed middle sector: speed-difference limit
                    dxx = (dxi_dot[j + 1][0] - dxi_dot[j][0]) / dd;
                else
                    dxx = (dxi[j + 1][m] - dxi[j][m]) / W;
                for (int p = 0; p <= P; ++p) {
                    int node = m * (P + 1) + p;
                    double sigma = static_cast<double>(p) / P;
                    double dx = sigma * dxi[j + 1][m] + (1.0 - sigma) * dxi[j][m];
                    double dxt = sigma * dxi_dot[j + 1][m] +
                                 (1.0 - sigma) * dxi_dot[j][m] -
                                 (a + sigma * dd) * dxx;
                    const TransformDerivs& der = ws->der[j][node];
                    const Vec& y = sol.ybar.at(j, m, p);
                    const Vec& yx = sol.ybar_x.at(j, m, p);
                    const Vec& dvv = dv.at(j, m, p);
                    // coefficient variation acting on ybar_x
                    Mat dA = jacobian_directional(model, y, dvv);
                    Vec dab = ((dA * yx - dxt * yx) - dxx * ws->abar_yx[j][node]) /
                              der.x_xbar;
                    // source variation g_x dx + g_y dv
                    double x = ws->xphys[j][node];
                    double h = 1e-6;
                    Vec gx = (model.source(t, x + h, y) - model.source(t, x - h, y)) /
                             (2.0 * h);
                    double hs = 1e-6 / std::max(1.0, dvv.cwiseAbs().maxCoeff());
                    Vec gy = (model.source(t, x, Vec(y + hs * dvv)) -
                              model.source(t, x, Vec(y - hs * dvv))) /
                             (2.0 * hs);
                    S.at(j, m, p) = gx * dx + gy - dab;
                }
            }
        }
    };

    pb.prepare();
    BroadResult res = solve_broad(pb, PiecewiseField(dom, n), sol.params.inner_tol,
                                  sol.params.inner_max);
    SensitivityBundle bundle;
    bundle.variation = variation;
    bundle.dybar = std::move(res.ybar);
    bundle.residuals = std::move(res.residuals);
    detail::curve_variations(sol, ws->tables, bundle.dybar, variation.dx0,
                             bundle.dxi, bundle.dxi_dot);
    return bundle;
}

// ============================================================
// Physical-coordinate sensitivity
// ============================================================

namespace detail {

// inverse-transformation variation from the stored xi / delta-xi values; the
// reference width is exact, so the tangent is exactly linear in delta-xi
inline double dxbar_value(const GrpSolution& sol, const SensitivityBundle& bundle,
                          int j, double t, double x) {
    const ReferenceDomain& dom = sol.dom;
    double xi_l = sol.curves.xi_at(j, t), xi_r = sol.curves.xi_at(j + 1, t);
    double dxi_l = sol.curves.interp(bundle.dxi[j], t);
    double dxi_r = sol.curves.interp(bundle.dxi[j + 1], t);
    double dXi = xi_r - xi_l;
    double W = dom.sector_width(j, t);
    return W * (-dxi_l * dXi - (x - xi_l) * (dxi_r - dxi_l)) / (dXi * dXi);
}

inline int locate_sector(const GrpSolution& sol, double t, double x) {
    int j = 0;
    for (int c = 1; c <= sol.dom.n; ++c)
        if (x >= sol.curves.xi_at(c, t)) j = c;
    return j;
}

inline Vec physical_sensitivity_raw(const GrpSolution& sol,
                                    const SensitivityBundle& bundle, double t,
                                    double x) {
    int j = locate_sector(sol, t, x);
    double w = sol.dom.sector_width(j, t);
    double xbar = w <= 1e-14 ? 0.0 : to_reference(sol.dom, sol.curves, j, t, x);
    double dxb = w <= 1e-14 ? 0.0 : dxbar_value(sol, bundle, j, t, x);
    return bundle.dybar.eval(j, t, xbar) + sol.ybar_x.eval(j, t, xbar) * dxb;
}

inline double shock_guard_band(const GrpSolution& sol) {
    const ReferenceDomain& dom = sol.dom;
    return std::max(2.0 * dom.ell / dom.grid.P,
                    sol.model.lambda_max * dom.T / dom.grid.M);
}

} // namespace detail

// delta-y at an off-shock physical point: the reference-field variation plus
// the advection of the frozen gradient by the inverse-map variation.
inline Vec physical_sensitivity(const GrpSolution& sol,
                                const SensitivityBundle& bundle, double t,
                                double x) {
    double band = detail::shock_guard_band(sol);
    for (int c = 1; c <= sol.dom.n; ++c)
        if (std::abs(x - sol.curves.xi_at(c, t)) < band)
            throw TooCloseToShock("x within the shock guard band");
    return detail::physical_sensitivity_raw(sol, bundle, t, x);
}

// ============================================================
// Shift-derivative structure and the measure derivative
// ============================================================

struct ShiftDerivative {
    double t = 0.0, lo = 0.0, hi = 0.0;  // I_t = [-ell + lmax t, ell - lmax t]
    Vec dxi;                             // per shock
    std::vector<double> shock_x;
    std::vector<Vec> jump;               // y(x_j-) - y(x_j+)
    std::function<Vec(double)> dy;       // tangent field (guard-free)

    // structured first-order shift S^x(eps * du)(x)
    Vec structured(double eps, double x) const {
        Vec v = eps * dy(x);
        for (size_t c = 0; c < shock_x.size(); ++c) {
            double dxj = eps * dxi[static_cast<Eigen::Index>(c)];
            if (dxj > 0.0 && x >= shock_x[c] && x < shock_x[c] + dxj)
                v += jump[c];
            else if (dxj < 0.0 && x >= shock_x[c] + dxj && x < shock_x[c])
                v -= jump[c];
        }
        return v;
    }
};

inline ShiftDerivative shift_derivative(const GrpSolution& sol,
                                        const SensitivityBundle& bundle, double t) {
    if (t <= 0.0 || t > sol.dom.T + 1e-12)
        throw ArgumentOutOfDomain("shift_derivative needs t in (0, T]");
    ShiftDerivative out;
    out.t = t;
    out.lo = -sol.dom.ell + sol.model.lambda_max * t;
    out.hi = sol.dom.ell - sol.model.lambda_max * t;
    out.dxi = Vec(sol.dom.n);
    for (int c = 1; c <= sol.dom.n; ++c) {
        out.dxi[c - 1] = sol.curves.interp(bundle.dxi[c], t);
        out.shock_x.push_back(sol.curves.xi_at(c, t));
        out.jump.push_back(sol.ybar.eval_sigma(c - 1, t, 1.0) -
                           sol.ybar.eval_sigma(c, t, 0.0));
    }
    out.dy = [&sol, &bundle, t](double x) {
        return detail::physical_sensitivity_raw(sol, bundle, t, x);
    };
    return out;
}

struct MeasureDerivative {
    double t = 0.0, lo = 0.0, hi = 0.0;
    std::function<Vec(double)> density;  // absolutely continuous part (delta-y)
    std::vector<double> atom_x;
    std::vector<Vec> atom_w;  // delta-xi_j(t) * (y(x_j-) - y(x_j+))
};

inline MeasureDerivative measure_derivative(const GrpSolution& sol,
                                            const SensitivityBundle& bundle,
                                            double t) {
    ShiftDerivative sd = shift_derivative(sol, bundle, t);
    MeasureDerivative md;
    md.t = t;
    md.lo = sd.lo;
    md.hi = sd.hi;
    md.density = sd.dy;
    for (size_t c = 0; c < sd.shock_x.size(); ++c) {
        md.atom_x.push_back(sd.shock_x[c]);
        md.atom_w.push_back(sd.dxi[static_cast<Eigen::Index>(c)] * sd.jump[c]);
    }
    return md;
}

// <phi, delta-mu>: shock-split quadrature of phi^T delta-y plus the atoms.
inline double measure_pairing(const MeasureDerivative& md,
                              const std::function<Vec(double)>& phi,
                              int quad_per_segment = 256) {
    std::vector<double> cuts{md.lo};
    for (double x : md.atom_x)
        if (x > md.lo && x < md.hi) cuts.push_back(x);
    cuts.push_back(md.hi);
    std::sort(cuts.begin(), cuts.end());
    double acc = 0.0;
    for (size_t s = 0; s + 1 < cuts.size(); ++s) {
        double a = cuts[s], b = cuts[s + 1];
        if (b - a <= 1e-14) continue;
        double h = (b - a) / quad_per_segment;
        // composite midpoint: stays strictly inside the segment, so one-sided
        // limits at the shock positions are unambiguous
        for (int k = 0; k < quad_per_segment; ++k) {
            double x = a + (k + 0.5) * h;
            acc += h * phi(x).dot(md.density(x));
        }
    }
    for (size_t c = 0; c < md.atom_x.size(); ++c) {
        if (md.atom_x[c] <= md.lo || md.atom_x[c] >= md.hi) continue;
        acc += phi(md.atom_x[c]).dot(md.atom_w[c]);
    }
    return acc;
}

} // namespace grpcalc

#endif // GRPCALC_SENSITIVITY_HPP
