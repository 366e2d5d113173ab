#ifndef GRPCALC_REFERENCE_GEOMETRY_HPP
#define GRPCALC_REFERENCE_GEOMETRY_HPP

#include "grpcalc/riemann_fan.hpp"

namespace grpcalc {

struct GridSpec {
    int M = 64;  // time levels
    int P = 64;  // sigma intervals per sector
};

// Fixed reference sectors between the straight lines xbar = s_j t, with outer
// edges xbar = -ell + s_left t and xbar = ell + s_right t (s_left = +lambda_max,
// s_right = -lambda_max).  Curves and sectors share one index convention:
// curve 0 = left boundary, curves 1..n = shocks, curve n+1 = right boundary;
// sector j lies between curves j and j+1.
struct ReferenceDomain {
    int n = 0;
    double T = 0.0, ell = 0.0, lambda_max = 0.0, eps = 0.0;
    Vec speeds;  // s_1..s_n of the nominal fan
    GridSpec grid;

    int sectors() const { return n + 1; }
    int curves() const { return n + 2; }
    double dt() const { return T / grid.M; }

    double edge_slope(int c) const {
        if (c == 0) return lambda_max;
        if (c == n + 1) return -lambda_max;
        return speeds[c - 1];
    }
    double edge_offset(int c) const {
        if (c == 0) return -ell;
        if (c == n + 1) return ell;
        return 0.0;
    }
    // Reference-space position of edge curve c at time t.
    double edge(int c, double t) const { return edge_offset(c) + edge_slope(c) * t; }
    double sector_left(int j, double t) const { return edge(j, t); }
    double sector_right(int j, double t) const { return edge(j + 1, t); }
    double sector_width(int j, double t) const {
        return sector_right(j, t) - sector_left(j, t);
    }
    bool is_middle(int j) const { return j > 0 && j < n; }

    void validate() const {
        if (n < 1) throw ConfigError("domain needs n >= 1");
        if (T > ell / (6.0 * lambda_max) + 1e-12)
            throw DegenerateGeometry("T > ell/(6 lambda_max)");
        if (eps > ell / 6.0 + 1e-12) throw DegenerateGeometry("eps > ell/6");
        for (int j = 0; j + 1 < n; ++j)
            if (speeds[j + 1] <= speeds[j])
                throw DegenerateGeometry("nominal speeds not increasing");
        if (speeds[0] < -lambda_max || speeds[n - 1] > lambda_max)
            throw DegenerateGeometry("nominal speed exceeds lambda_max");
        if (grid.M < 4 || grid.P < 4) throw ConfigError("grid sizes must be >= 4");
    }
};

// Sector-wise grid function: values at t_m = m*dt, sigma_p = p/P where
// xbar = lerp(sector_left(t), sector_right(t), sigma).  t=0 rows of middle
// sectors hold the principal-part constant.
struct PiecewiseField {
    int n_comp = 0;
    ReferenceDomain dom;
    std::vector<std::vector<Vec>> vals;  // [sector][m*(P+1)+p]

    PiecewiseField() = default;
    PiecewiseField(const ReferenceDomain& d, int comps) : n_comp(comps), dom(d) {
        vals.assign(d.sectors(),
                    std::vector<Vec>((d.grid.M + 1) * (d.grid.P + 1),
                                     Vec::Zero(comps)));
    }

    Vec& at(int j, int m, int p) { return vals[j][m * (dom.grid.P + 1) + p]; }
    const Vec& at(int j, int m, int p) const {
        return vals[j][m * (dom.grid.P + 1) + p];
    }

    double sigma_of(int j, double t, double xbar) const {
        double w = dom.sector_width(j, t);
        if (w <= 1e-14) return 0.5;
        return clamp01((xbar - dom.sector_left(j, t)) / w);
    }

    Vec eval_sigma(int j, double t, double sigma) const {
        int M = dom.grid.M, P = dom.grid.P;
        double tau = std::clamp(t / dom.dt(), 0.0, static_cast<double>(M));
        int m = std::min(static_cast<int>(tau), M - 1);
        double wt = tau - m;
        double sp = clamp01(sigma) * P;
        int p = std::min(static_cast<int>(sp), P - 1);
        double ws = sp - p;
        auto row = [&](int mm) {
            return (1.0 - ws) * at(j, mm, p) + ws * at(j, mm, p + 1);
        };
        return (1.0 - wt) * row(m) + wt * row(m + 1);
    }

    Vec eval(int j, double t, double xbar) const {
        return eval_sigma(j, t, sigma_of(j, t, xbar));
    }

    // allocation-free scalar variant for hot loops
    double eval_sigma_comp(int j, double t, double sigma, int k) const {
        int M = dom.grid.M, P = dom.grid.P;
        double tau = std::clamp(t / dom.dt(), 0.0, static_cast<double>(M));
        int m = std::min(static_cast<int>(tau), M - 1);
        double wt = tau - m;
        double sp = clamp01(sigma) * P;
        int p = std::min(static_cast<int>(sp), P - 1);
        double ws = sp - p;
        auto row = [&](int mm) {
            return (1.0 - ws) * at(j, mm, p)[k] + ws * at(j, mm, p + 1)[k];
        };
        return (1.0 - wt) * row(m) + wt * row(m + 1);
    }

    double eval_comp(int j, double t, double xbar, int k) const {
        return eval_sigma_comp(j, t, sigma_of(j, t, xbar), k);
    }

    double pc0_norm() const {
        double nrm = 0.0;
        for (const auto& sec : vals)
            for (const Vec& v : sec) nrm = std::max(nrm, v.cwiseAbs().maxCoeff());
        return nrm;
    }

    double pc0_distance(const PiecewiseField& other) const {
        double nrm = 0.0;
        for (size_t j = 0; j < vals.size(); ++j)
            for (size_t k = 0; k < vals[j].size(); ++k)
                nrm = std::max(nrm,
                               (vals[j][k] - other.vals[j][k]).cwiseAbs().maxCoeff());
        return nrm;
    }
};

// Sampled curves xi(t_m) with speeds xi_dot(t_m); index convention as in
// ReferenceDomain.
struct CurveFamily {
    ReferenceDomain dom;
    std::vector<std::vector<double>> xi, xi_dot;  // [curve][m]

    double interp(const std::vector<double>& a, double t) const {
        int M = dom.grid.M;
        double tau = std::clamp(t / dom.dt(), 0.0, static_cast<double>(M));
        int m = std::min(static_cast<int>(tau), M - 1);
        double w = tau - m;
        return (1.0 - w) * a[m] + w * a[m + 1];
    }
    double xi_at(int c, double t) const { return interp(xi[c], t); }
    double xi_dot_at(int c, double t) const { return interp(xi_dot[c], t); }
};

inline CurveFamily build_curves(const ReferenceDomain& dom, const SystemModel& model,
                                const PiecewiseField& ybar, double x0) {
    int n = dom.n, M = dom.grid.M, P = dom.grid.P;
    CurveFamily fam;
    fam.dom = dom;
    fam.xi.assign(n + 2, std::vector<double>(M + 1));
    fam.xi_dot.assign(n + 2, std::vector<double>(M + 1));
    for (int m = 0; m <= M; ++m) {
        fam.xi_dot[0][m] =
            eigen_decompose(model, ybar.at(0, m, 0)).lambdas[n - 1];
        fam.xi_dot[n + 1][m] =
            eigen_decompose(model, ybar.at(n, m, P)).lambdas[0];
        for (int c = 1; c <= n; ++c)
            fam.xi_dot[c][m] = averaged_eigen(model, ybar.at(c - 1, m, P),
                                              ybar.at(c, m, 0)).lambdas[c - 1];
    }
    double dt = dom.dt();
    for (int c = 0; c <= n + 1; ++c) {
        double start = c == 0 ? -dom.ell : (c == n + 1 ? dom.ell : x0);
        fam.xi[c][0] = start;
        for (int m = 1; m <= M; ++m)
            fam.xi[c][m] =
                fam.xi[c][m - 1] + 0.5 * dt * (fam.xi_dot[c][m - 1] + fam.xi_dot[c][m]);
    }
    // non-degeneracy (nondegcondition_shockcurves / _boundarycurves)
    for (int m = 0; m <= M; ++m) {
        double t = m * dt;
        for (int c = 1; c + 1 <= n; ++c) {
            double gap = fam.xi[c + 1][m] - fam.xi[c][m];
            double ref = (dom.speeds[c] - dom.speeds[c - 1]) * t;
            if (gap < 0.5 * ref - 1e-12 || gap > 2.0 * ref + 1e-12)
                throw DegenerateGeometry("shock-curve gap out of [ref/2, 2ref]");
        }
        double wl = fam.xi[1][m] - fam.xi[0][m];
        double wr = fam.xi[n + 1][m] - fam.xi[n][m];
        if (wl < 0.5 * dom.ell || wl > 2.0 * dom.ell || wr < 0.5 * dom.ell ||
            wr > 2.0 * dom.ell)
            throw DegenerateGeometry("boundary sector width out of [ell/2, 2 ell]");
    }
    return fam;
}

// ----- transformations -----

inline double to_physical(const ReferenceDomain& dom, const CurveFamily& curves,
                          int j, double t, double xbar) {
    double L = dom.sector_left(j, t), w = dom.sector_width(j, t);
    if (w <= 1e-14) return curves.xi_at(j, 0.0);  // collapsed middle sector: x0
    double theta = (xbar - L) / w;
    if (theta < -1e-9 || theta > 1.0 + 1e-9)
        throw OutOfSector("xbar outside sector " + std::to_string(j));
    return (1.0 - theta) * curves.xi_at(j, t) + theta * curves.xi_at(j + 1, t);
}

inline double to_reference(const ReferenceDomain& dom, const CurveFamily& curves,
                           int j, double t, double x) {
    double w = dom.sector_width(j, t);
    if (w <= 1e-14)
        throw DegenerateTime("middle sector collapsed at t=0: use principal part");
    double xl = curves.xi_at(j, t), xr = curves.xi_at(j + 1, t);
    double theta = (x - xl) / (xr - xl);
    if (theta < -1e-9 || theta > 1.0 + 1e-9)
        throw OutOfSector("x outside physical sector " + std::to_string(j));
    return dom.sector_left(j, t) + theta * w;
}

struct TransformDerivs {
    double x_t = 0.0, x_xbar = 1.0, xbar_t = 0.0, xbar_x = 1.0, x_t_xbar = 0.0;
};

// Derivatives of the space transformation at (t, sigma) in sector j.  The
// x_t and mixed-derivative formulas are rearranged so the only 1/t factor is
// the integral mean (xi_{j+1}-xi_j)/((s_{j+1}-s_j) t), which stays bounded and
// cancellation-free down to t=0.
inline TransformDerivs transform_derivatives_sigma(const ReferenceDomain& dom,
                                                   const CurveFamily& curves, int j,
                                                   double t, double sigma) {
    double a = dom.edge_slope(j), b = dom.edge_slope(j + 1), dd = b - a;
    double D = dom.sector_width(j, t);
    TransformDerivs out;
    if (D <= 1e-14) {  // middle sector at t = 0: limit values
        double d0 = curves.xi_dot[j + 1][0] - curves.xi_dot[j][0];
        out.x_xbar = d0 / dd;
        out.x_t = sigma * curves.xi_dot[j + 1][0] +
                  (1.0 - sigma) * curves.xi_dot[j][0] - (a + sigma * dd) * out.x_xbar;
        double dt = dom.dt();
        double d1 = curves.xi_dot[j + 1][1] - curves.xi_dot[j][1];
        out.x_t_xbar = (d1 - d0) / dt / (2.0 * dd);
    } else {
        double dxi = curves.xi_at(j + 1, t) - curves.xi_at(j, t);
        double viL = curves.xi_dot_at(j, t), viR = curves.xi_dot_at(j + 1, t);
        out.x_xbar = dxi / D;
        out.x_t = sigma * viR + (1.0 - sigma) * viL - (a + sigma * dd) * out.x_xbar;
        out.x_t_xbar = (viR - viL - dd * out.x_xbar) / D;
    }
    if (out.x_xbar < 0.5 - 1e-9 || out.x_xbar > 2.0 + 1e-9)
        throw BoundViolation("x_xbar outside [1/2, 2]");
    out.xbar_x = 1.0 / out.x_xbar;
    out.xbar_t = -out.x_t / out.x_xbar;
    return out;
}

inline TransformDerivs transform_derivatives(const ReferenceDomain& dom,
                                             const CurveFamily& curves, int j,
                                             double t, double xbar) {
    double w = dom.sector_width(j, t);
    if (w <= 1e-14)
        throw DegenerateTime("transform_derivatives needs t > 0 in middle sectors");
    double sigma = (xbar - dom.sector_left(j, t)) / w;
    if (sigma < -1e-9 || sigma > 1.0 + 1e-9) throw OutOfSector("xbar outside sector");
    return transform_derivatives_sigma(dom, curves, j, t, sigma);
}

inline double transformed_eigenvalue(const SystemModel& model,
                                     const TransformDerivs& der, const Vec& z, int i) {
    auto dec = eigen_decompose(model, z);
    Vec lbar(model.n);
    for (int k = 0; k < model.n; ++k)
        lbar[k] = der.xbar_t + der.xbar_x * dec.lambdas[k];
    for (int k = 0; k < model.n; ++k)
        for (int q = k + 1; q < model.n; ++q)
            if (std::abs(lbar[q] - lbar[k]) < model.eta_min / 2.0 - 1e-12)
                throw MinimalAngleViolation("transformed eigenvalue gap below eta_min/2");
    return lbar[i];
}

// ----- discrete derivative fields -----

// x-bar derivative by grid differencing (central interior, one-sided edges);
// collapsed t=0 rows of middle sectors copy the first positive-time row.
inline PiecewiseField field_xbar_derivative(const PiecewiseField& f) {
    const ReferenceDomain& dom = f.dom;
    int M = dom.grid.M, P = dom.grid.P;
    PiecewiseField out(dom, f.n_comp);
    for (int j = 0; j < dom.sectors(); ++j) {
        for (int m = 0; m <= M; ++m) {
            double w = dom.sector_width(j, m * dom.dt());
            if (w <= 1e-14) continue;  // handled below
            double dsig = 1.0 / P;
            for (int p = 0; p <= P; ++p) {
                Vec dv;
                if (p == 0)
                    dv = (f.at(j, m, 1) - f.at(j, m, 0)) / dsig;
                else if (p == P)
                    dv = (f.at(j, m, P) - f.at(j, m, P - 1)) / dsig;
                else
                    dv = (f.at(j, m, p + 1) - f.at(j, m, p - 1)) / (2.0 * dsig);
                out.at(j, m, p) = dv / w;
            }
        }
        if (dom.is_middle(j))
            for (int p = 0; p <= P; ++p) out.at(j, 0, p) = out.at(j, 1, p);
    }
    return out;
}

// Time derivative at fixed xbar: d/dt|xbar = d/dt|sigma - (edge motion) * d/dxbar.
inline PiecewiseField field_t_derivative(const PiecewiseField& f,
                                         const PiecewiseField& f_xbar) {
    const ReferenceDomain& dom = f.dom;
    int M = dom.grid.M, P = dom.grid.P;
    double dt = dom.dt();
    PiecewiseField out(dom, f.n_comp);
    for (int j = 0; j < dom.sectors(); ++j) {
        double a = dom.edge_slope(j), dd = dom.edge_slope(j + 1) - a;
        for (int m = 0; m <= M; ++m) {
            for (int p = 0; p <= P; ++p) {
                Vec dv;
                if (m == 0)
                    dv = (f.at(j, 1, p) - f.at(j, 0, p)) / dt;
                else if (m == M)
                    dv = (f.at(j, M, p) - f.at(j, M - 1, p)) / dt;
                else
                    dv = (f.at(j, m + 1, p) - f.at(j, m - 1, p)) / (2.0 * dt);
                double sigma = static_cast<double>(p) / P;
                out.at(j, m, p) = dv - (a + sigma * dd) * f_xbar.at(j, m, p);
            }
        }
    }
    return out;
}

// ----- well-definedness report -----

struct WellDefReport {
    bool pass = true;
    std::vector<std::string> violations;
    double grad_lambda_norm = 0.0, pc1_norm = 0.0, c_max = 0.0;

    void fail(const std::string& msg) {
        pass = false;
        violations.push_back(msg);
    }
};

inline WellDefReport check_welldefinedness(const ReferenceDomain& dom,
                                           const SystemModel& model,
                                           const PiecewiseField& ybar, double x0,
                                           const RiemannFan& nominal_fan,
                                           double M1_bound) {
    WellDefReport rep;
    int n = dom.n, P = dom.grid.P;
    if (dom.T > dom.ell / (6.0 * model.lambda_max) + 1e-12)
        rep.fail("T <= ell/(6 lambda_max) violated");
    if (dom.eps > dom.ell / 6.0 + 1e-12) rep.fail("eps <= ell/6 violated");
    if (std::abs(x0) > dom.eps) rep.fail("|x0| <= eps violated");

    // (1) discrete C1 bound of the outer initial rows
    PiecewiseField yx = field_xbar_derivative(ybar);
    double m1 = 0.0;
    for (int p = 0; p <= P; ++p) {
        m1 = std::max(m1, yx.at(0, 0, p).cwiseAbs().maxCoeff());
        m1 = std::max(m1, yx.at(n, 0, p).cwiseAbs().maxCoeff());
    }
    // dilation stretches the data derivative by at most (1 + eps/ell)
    if (m1 > M1_bound * (1.0 + dom.eps / dom.ell) * (1.0 + 1e-6) + 1e-12)
        rep.fail("initial C1 bound exceeds M1");

    // (2) jump pair admissible
    try {
        RiemannFan fan = solve_riemann(model, ybar.at(0, 0, P), ybar.at(n, 0, 0));
        for (int i = 0; i < model.n; ++i)
            if (model.field_kinds[i] == FieldKind::GenuinelyNonlinear &&
                fan.sigma[i] > 1e-10)
                rep.fail("jump pair not admissible (rarefaction)");
    } catch (const Error& e) {
        rep.fail(std::string("jump pair: ") + e.what());
    }

    // (3) smallness inequality with sampled grad-lambda norm
    double gl = 0.0;
    int K = 5;
    for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b) {
            Vec y = model.box_center;
            y[0] += model.box_radius * (2.0 * a / (K - 1) - 1.0);
            if (model.n > 1) y[1] += model.box_radius * (2.0 * b / (K - 1) - 1.0);
            for (int i = 0; i < model.n; ++i)
                gl = std::max(gl, grad_lambda(model, i, y).norm());
        }
    rep.grad_lambda_norm = gl;
    PiecewiseField yt = field_t_derivative(ybar, yx);
    rep.pc1_norm = std::max({ybar.pc0_norm(), yx.pc0_norm(), yt.pc0_norm()});
    double cmax = 0.0;
    for (int j = 1; j < n; ++j)
        cmax = std::max(cmax, (ybar.at(j, 0, 0) - nominal_fan.states[j])
                                  .cwiseAbs()
                                  .maxCoeff());
    rep.c_max = cmax;
    if (gl * (dom.T * rep.pc1_norm + cmax) > model.eta_min / 8.0)
        rep.fail("grad-lambda smallness inequality violated");

    // non-degeneracy of the built curves
    try {
        (void)build_curves(dom, model, ybar, x0);
    } catch (const Error& e) {
        rep.fail(std::string("curve non-degeneracy: ") + e.what());
    }
    return rep;
}

} // namespace grpcalc

#endif // GRPCALC_REFERENCE_GEOMETRY_HPP
