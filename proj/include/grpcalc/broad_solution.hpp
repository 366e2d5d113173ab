#ifndef GRPCALC_BROAD_SOLUTION_HPP
#define GRPCALC_BROAD_SOLUTION_HPP

#include "grpcalc/reference_geometry.hpp"

namespace grpcalc {

// ============================================================
// Semilinear fixed-point problem on the reference sectors
// ============================================================
//
// Solves v_t + Abar(t,xbar) v_xbar = S(v) sector-wise by the method of
// characteristics: the i-th characteristic component is traced backward until
// it exits its sector, picked up there (initial data on the outer sectors,
// coupling boundary operator F_i^j on a shock edge), and the projected source
// l_i^T S + c_i^T v is integrated back along the path.  The coefficient field
// Abar is frozen (given by zbar and its curve family), so the characteristic
// geometry is precomputed once and reused across fixed-point sweeps.

enum class ExitKind { InitialLine, LeftShock, RightShock };

struct CharacteristicPath {
    int field = 0, sector = 0;
    ExitKind kind = ExitKind::InitialLine;
    int exit_curve = -1;  // shock curve index for Left/RightShock exits
    double exit_time = 0.0, exit_xbar = 0.0;
    // quadrature nodes, ascending time (exit first, start last)
    std::vector<double> node_t, node_x;
    Mat lc;  // 2n x K: rows 0..n-1 = l_i(zbar), rows n..2n-1 = c_i, per node
};

struct SemilinearProblem {
    const SystemModel* model = nullptr;
    ReferenceDomain dom;
    double x0 = 0.0;
    PiecewiseField zbar;  // frozen coefficient field
    CurveFamily curves;   // geometry matching zbar

    // Source on the grid: fills out with S(v) at every node; null means zero.
    std::function<void(const PiecewiseField& v, PiecewiseField& out)> source;
    // Boundary operator F_i^c(t, transported, vL, vR): i is the zero-based
    // field index, c the 1-based shock curve; vL/vR are the full-state traces
    // left/right of the shock from the previous sweep.  Null = pass-through.
    std::function<double(int i, int c, double t, double transported, const Vec& vL,
                         const Vec& vR)>
        boundary_op;
    std::function<Vec(double)> init_left, init_right;  // data on the t=0 rows
    int jobs = 1;

    // prepared caches
    bool prepared = false;
    PiecewiseField lambda_bar;  // n comps: transformed speeds per node
    PiecewiseField left_field;  // n*n comps: rows of L(zbar), row-major
    std::vector<std::vector<Mat>> right_frames;       // [sector][node]
    std::vector<PiecewiseField> coeff;                // c_i = grad l_i (z_t + lam_i z_x)
    std::vector<std::vector<std::vector<CharacteristicPath>>> paths;  // [j][i][node]

    void prepare();
};

// ============================================================
// Characteristic tracing
// ============================================================

// Backward trace of the i-th characteristic from (t, xbar) in sector j: RK2
// with dt/4 substeps, exits resolved on the linear substep.  Middle sectors
// exit through a shock edge (fields i >= j hit the left curve j, fields
// i < j the right curve j+1, zero-based i); outer sectors reach t = 0.
inline CharacteristicPath trace_characteristic(const SemilinearProblem& pb, int i,
                                               double t, double xbar, int j) {
    const ReferenceDomain& dom = pb.dom;
    int n = pb.model->n;
    CharacteristicPath path;
    path.field = i;
    path.sector = j;
    bool middle = dom.is_middle(j);
    double side = 0.0;
    if (middle) {
        if (i >= j) {
            path.kind = ExitKind::LeftShock;
            path.exit_curve = j;
            side = +1.0;  // inside means xbar >= edge(j)
        } else {
            path.kind = ExitKind::RightShock;
            path.exit_curve = j + 1;
            side = -1.0;  // inside means xbar <= edge(j+1)
        }
    }

    std::vector<double> ts, xs;  // descending time while tracing
    auto finish = [&](double te, double xe) {
        path.exit_time = te;
        path.exit_xbar = xe;
        if (ts.empty() || ts.back() - te > 1e-14) {
            ts.push_back(te);
            xs.push_back(xe);
        } else {
            xs.back() = xe;
        }
        std::reverse(ts.begin(), ts.end());
        std::reverse(xs.begin(), xs.end());
        path.node_t = std::move(ts);
        path.node_x = std::move(xs);
        size_t K = path.node_t.size();
        path.lc = Mat::Zero(2 * n, static_cast<Eigen::Index>(K));
        for (size_t k = 0; k < K; ++k) {
            double sig = pb.zbar.sigma_of(j, path.node_t[k], path.node_x[k]);
            for (int r = 0; r < n; ++r) {
                path.lc(r, static_cast<Eigen::Index>(k)) =
                    pb.left_field.eval_sigma_comp(j, path.node_t[k], sig, i * n + r);
                path.lc(n + r, static_cast<Eigen::Index>(k)) =
                    pb.coeff[i].eval_sigma_comp(j, path.node_t[k], sig, r);
            }
        }
    };

    if (middle && dom.sector_width(j, t) <= 1e-14) {  // collapsed start at the origin
        path.exit_time = 0.0;
        path.exit_xbar = 0.0;
        return path;
    }

    ts.push_back(t);
    xs.push_back(xbar);
    double h = dom.dt() / 4.0;
    double ct = t, cx = xbar;
    auto lam = [&](double tt, double xx) {
        return pb.lambda_bar.eval_comp(j, tt, xx, i);
    };
    auto dist = [&](double tt, double xx) {
        return side * (xx - dom.edge(path.exit_curve, tt));
    };
    int step_idx = 0;
    while (true) {
        double step = std::min(h, ct);
        if (step <= 1e-15) {
            if (middle) {
                if (std::abs(cx) <= 1e-9) {
                    finish(0.0, 0.0);
                    return path;
                }
                throw NoExit("middle-sector characteristic reached t=0 off the origin");
            }
            finish(0.0, cx);
            return path;
        }
        double k1 = lam(ct, cx);
        double k2 = lam(ct - 0.5 * step, cx - 0.5 * step * k1);
        double nt = ct - step, nx = cx - step * k2;
        if (middle) {
            double d1 = dist(ct, cx), d0 = dist(nt, nx);
            // the opposite edge must never be crossed
            double od = side > 0.0 ? dom.edge(j + 1, nt) - nx : nx - dom.edge(j, nt);
            if (od < -1e-9)
                throw NoExit("characteristic left sector through the wrong edge");
            if (d0 < 0.0) {
                double w = d1 <= d0 ? 0.0 : clamp01(d1 / (d1 - d0));
                double te = std::max(0.0, ct - w * step);
                finish(te, dom.edge(path.exit_curve, te));
                return path;
            }
        } else {
            double gl = nx - dom.edge(j, nt), gr = dom.edge(j + 1, nt) - nx;
            if (gl < -1e-9 || gr < -1e-9)
                throw NoExit("outer-sector characteristic left the sector laterally");
            nx = std::clamp(nx, dom.edge(j, nt), dom.edge(j + 1, nt));
        }
        ct = nt;
        cx = nx;
        ++step_idx;
        if (step_idx % 4 == 0) {
            ts.push_back(ct);
            xs.push_back(cx);
        }
    }
}

// ============================================================
// prepare(): per-node frames, transformed speeds, coefficient
// fields, entropy gates, and all characteristic paths
// ============================================================

inline void SemilinearProblem::prepare() {
    if (!model) throw ConfigError("SemilinearProblem needs a model");
    int n = model->n, M = dom.grid.M, P = dom.grid.P;
    int per_sector = (M + 1) * (P + 1);
    if (!boundary_op)
        boundary_op = [](int, int, double, double transported, const Vec&, const Vec&) {
            return transported;
        };
    if (!init_left) init_left = [n](double) { return Vec::Zero(n); };
    if (!init_right) init_right = [n](double) { return Vec::Zero(n); };

    lambda_bar = PiecewiseField(dom, n);
    left_field = PiecewiseField(dom, n * n);
    right_frames.assign(dom.sectors(), std::vector<Mat>(per_sector));
    coeff.assign(n, PiecewiseField(dom, n));
    PiecewiseField zx = field_xbar_derivative(zbar);
    PiecewiseField zt = field_t_derivative(zbar, zx);

    double dt = dom.dt();
    parallel_for(dom.sectors() * per_sector, jobs, [&](int idx) {
        int j = idx / per_sector, node = idx % per_sector;
        int m = node / (P + 1), p = node % (P + 1);
        double t = m * dt, sigma = static_cast<double>(p) / P;
        TransformDerivs der = transform_derivatives_sigma(dom, curves, j, t, sigma);
        const Vec& z = zbar.at(j, m, p);
        auto dec = eigen_decompose(*model, z);
        Vec& lb = lambda_bar.at(j, m, p);
        for (int i = 0; i < n; ++i) lb[i] = der.xbar_t + der.xbar_x * dec.lambdas[i];
        for (int a = 0; a + 1 < n; ++a)
            if (lb[a + 1] - lb[a] < model->eta_min / 2.0 - 1e-9)
                throw MinimalAngleViolation("transformed speed gap below eta_min/2");
        Vec& lf = left_field.at(j, m, p);
        for (int i = 0; i < n; ++i)
            for (int r = 0; r < n; ++r) lf[i * n + r] = dec.left(i, r);
        right_frames[j][node] = dec.right;
        for (int i = 0; i < n; ++i) {
            Mat gl = grad_left_eigenvector(*model, i, z);
            coeff[i].at(j, m, p) = gl * (zt.at(j, m, p) + lb[i] * zx.at(j, m, p));
        }
    });

    // entropy gates at the shock traces: own field impinges (>= / <=), cross
    // fields strictly separated from the shock slope
    for (int c = 1; c <= dom.n; ++c) {
        double s = dom.edge_slope(c);
        for (int m = 0; m <= M; ++m) {
            const Vec& lbL = lambda_bar.at(c - 1, m, P);
            const Vec& lbR = lambda_bar.at(c, m, 0);
            if (lbL[c - 1] < s - 1e-7 || lbR[c - 1] > s + 1e-7)
                throw NoExit("own-field entropy gate violated at shock trace");
            for (int i = 0; i < n; ++i) {
                if (i == c - 1) continue;
                bool fast = i > c - 1;
                if (fast && (lbL[i] <= s + 1e-9 || lbR[i] <= s + 1e-9))
                    throw NoExit("cross-field gate violated at shock trace");
                if (!fast && (lbL[i] >= s - 1e-9 || lbR[i] >= s - 1e-9))
                    throw NoExit("cross-field gate violated at shock trace");
            }
        }
    }

    paths.assign(dom.sectors(), std::vector<std::vector<CharacteristicPath>>(
                                    n, std::vector<CharacteristicPath>(per_sector)));
    prepared = true;  // tracing reads lambda_bar/left_field/coeff
    for (int j = 0; j < dom.sectors(); ++j)
        for (int i = 0; i < n; ++i)
            parallel_for(per_sector, jobs, [&, j, i](int node) {
                int m = node / (P + 1), p = node % (P + 1);
                double t = m * dt;
                double xb = dom.sector_left(j, t) +
                            (static_cast<double>(p) / P) * dom.sector_width(j, t);
                paths[j][i][node] = trace_characteristic(*this, i, t, xb, j);
            });
}

// ============================================================
// Source quadrature along a path
// ============================================================

namespace detail {

inline double path_quadrature(const SemilinearProblem& pb,
                              const CharacteristicPath& path,
                              const PiecewiseField& iterate, const PiecewiseField* S) {
    size_t K = path.node_t.size();
    if (K < 2) return 0.0;
    int n = pb.model->n, j = path.sector;
    double acc = 0.0, fprev = 0.0;
    for (size_t k = 0; k < K; ++k) {
        double t = path.node_t[k], x = path.node_x[k];
        double sig = iterate.sigma_of(j, t, x);
        double f = 0.0;
        for (int r = 0; r < n; ++r) {
            f += path.lc(n + r, static_cast<Eigen::Index>(k)) *
                 iterate.eval_sigma_comp(j, t, sig, r);
            if (S)
                f += path.lc(r, static_cast<Eigen::Index>(k)) *
                     S->eval_sigma_comp(j, t, sig, r);
        }
        if (k > 0) acc += 0.5 * (t - path.node_t[k - 1]) * (f + fprev);
        fprev = f;
    }
    return acc;
}

} // namespace detail

inline double characteristic_source(const SemilinearProblem& pb,
                                    const CharacteristicPath& path,
                                    const PiecewiseField& iterate) {
    if (!pb.source) return detail::path_quadrature(pb, path, iterate, nullptr);
    PiecewiseField S(pb.dom, pb.model->n);
    pb.source(iterate, S);
    return detail::path_quadrature(pb, path, iterate, &S);
}

// ============================================================
// One sweep of the fixed-point operator T
// ============================================================

inline PiecewiseField apply_operator_T(const SemilinearProblem& pb,
                                       const PiecewiseField& v) {
    if (!pb.prepared) throw ConfigError("apply_operator_T before prepare()");
    const ReferenceDomain& dom = pb.dom;
    int n = pb.model->n, M = dom.grid.M, P = dom.grid.P;
    int per_sector = (M + 1) * (P + 1);

    PiecewiseField S;
    bool has_src = static_cast<bool>(pb.source);
    if (has_src) {
        S = PiecewiseField(dom, n);
        pb.source(v, S);
    }

    PiecewiseField comp(dom, n);  // scalar characteristic components

    // transported components interpolated in t along a stored shock edge
    auto edge_comp = [&](int sec, int i, int pcol, double t) {
        double tau = std::clamp(t / dom.dt(), 0.0, static_cast<double>(M));
        int m = std::min(static_cast<int>(tau), M - 1);
        double w = tau - m;
        return (1.0 - w) * comp.at(sec, m, pcol)[i] + w * comp.at(sec, m + 1, pcol)[i];
    };

    auto node_value = [&](int j, int i, int node) {
        const CharacteristicPath& path = pb.paths[j][i][node];
        double val;
        if (path.kind == ExitKind::InitialLine) {
            Vec u0 = (j == 0 ? pb.init_left : pb.init_right)(path.exit_xbar);
            double sig = pb.zbar.sigma_of(j, 0.0, path.exit_xbar);
            val = 0.0;
            for (int r = 0; r < n; ++r)
                val += pb.left_field.eval_sigma_comp(j, 0.0, sig, i * n + r) * u0[r];
        } else {
            int c = path.exit_curve;
            double te = path.exit_time;
            double transported = path.kind == ExitKind::LeftShock
                                     ? edge_comp(c - 1, i, P, te)
                                     : edge_comp(c, i, 0, te);
            Vec vL = v.eval_sigma(c - 1, te, 1.0);
            Vec vR = v.eval_sigma(c, te, 0.0);
            val = pb.boundary_op(i, c, te, transported, vL, vR);
        }
        return val + detail::path_quadrature(pb, path, v, has_src ? &S : nullptr);
    };

    // sweep order: outer sectors first, then fast fields left-to-right, then
    // slow fields right-to-left, so every transported trace is already new
    auto run_stage = [&](int j, int i_lo, int i_hi) {
        int count = (i_hi - i_lo) * per_sector;
        parallel_for(count, pb.jobs, [&, j, i_lo](int idx) {
            int i = i_lo + idx / per_sector, node = idx % per_sector;
            comp.at(j, node / (P + 1), node % (P + 1))[i] = node_value(j, i, node);
        });
    };
    run_stage(0, 0, n);
    if (dom.n >= 1) run_stage(dom.n, 0, n);
    for (int j = 1; j < dom.n; ++j) run_stage(j, j, n);        // fields i >= j
    for (int j = dom.n - 1; j >= 1; --j) run_stage(j, 0, j);   // fields i < j

    PiecewiseField out(dom, n);
    parallel_for(dom.sectors() * per_sector, pb.jobs, [&](int idx) {
        int j = idx / per_sector, node = idx % per_sector;
        int m = node / (P + 1), p = node % (P + 1);
        out.at(j, m, p) = pb.right_frames[j][node] * comp.at(j, m, p);
    });
    return out;
}

// ============================================================
// Fixed-point iteration
// ============================================================

struct BroadResult {
    PiecewiseField ybar;
    std::vector<double> residuals;  // PC0 distance per sweep
};

inline BroadResult solve_broad(const SemilinearProblem& pb,
                               const PiecewiseField& guess, double tol = 1e-10,
                               int max_iter = 200) {
    BroadResult res;
    res.ybar = guess;
    for (int it = 0; it < max_iter; ++it) {
        PiecewiseField next = apply_operator_T(pb, res.ybar);
        double r = next.pc0_distance(res.ybar);
        res.residuals.push_back(r);
        res.ybar = std::move(next);
        if (r <= tol) return res;
        // eventual geometric decay: once past the transient, five successive
        // ratios above 0.95 mean the iteration is not contracting
        size_t k = res.residuals.size();
        if (k >= 8) {
            bool stalled = true;
            for (size_t q = k - 5; q < k; ++q)
                if (res.residuals[q] <= 0.95 * res.residuals[q - 1]) {
                    stalled = false;
                    break;
                }
            if (stalled)
                throw NoContraction("fixed-point residual ratio above 0.95 for 5 sweeps");
        }
    }
    throw NoContraction("fixed point not reached in " + std::to_string(max_iter) +
                        " sweeps");
}

// ============================================================
// A-priori PC0 bound (Gronwall constants)
// ============================================================

// Returns (lhs, rhs) of the a-priori estimate
//   ||ybar||_PC0 <= c0 * exp(T c1),
//   c0 = 2 (T ||l|| ||S(0)|| + ||F(.,0)|| + ||l|| ||u||_inf) sum_k L_F1^k,
//   c1 = 2 (||l|| L_S + C_dl) sum_k L_F1^k,
// with L_F1 the transported-argument Lipschitz constant of the boundary
// operators, L_S the source Lipschitz constant, and C_dl the sup of the
// coefficient fields c_i; all constants are sampled from the problem data.
inline std::pair<double, double> pc0_bound_check(const SemilinearProblem& pb,
                                                 const PiecewiseField& sol) {
    if (!pb.prepared) throw ConfigError("pc0_bound_check before prepare()");
    const ReferenceDomain& dom = pb.dom;
    int n = pb.model->n, M = dom.grid.M, P = dom.grid.P;
    double lhs = sol.pc0_norm();

    PiecewiseField zero(dom, n);
    double h0 = 0.0, Lsrc = 0.0;
    if (pb.source) {
        PiecewiseField S0(dom, n);
        pb.source(zero, S0);
        h0 = S0.pc0_norm();
        PiecewiseField Ss(dom, n);
        pb.source(sol, Ss);
        double den = std::max(lhs, 1e-300);
        Lsrc = Ss.pc0_distance(S0) / den;
    }

    double F0 = 0.0, LF1 = 0.0;
    Vec z = Vec::Zero(n);
    for (int c = 1; c <= dom.n; ++c)
        for (int i = 0; i < n; ++i) {
            if (i == c - 1) continue;
            for (int m = 0; m <= M; m += std::max(1, M / 8)) {
                double t = m * dom.dt();
                F0 = std::max(F0, std::abs(pb.boundary_op(i, c, t, 0.0, z, z)));
                double d = 1e-6;
                double fp = pb.boundary_op(i, c, t, d, z, z);
                double fm = pb.boundary_op(i, c, t, -d, z, z);
                LF1 = std::max(LF1, std::abs(fp - fm) / (2.0 * d));
            }
        }

    double u_inf = 0.0;
    for (int p = 0; p <= P; ++p) {
        double xl = -dom.ell + dom.ell * p / P;  // t=0 span of sector 0
        double xr = dom.ell * p / P - 0.0;       // t=0 span of sector n: [0, ell]
        u_inf = std::max(u_inf, pb.init_left(xl).cwiseAbs().maxCoeff());
        u_inf = std::max(u_inf, pb.init_right(xr).cwiseAbs().maxCoeff());
    }

    double l_norm = 0.0, C_dl = 0.0;
    for (int j = 0; j < dom.sectors(); ++j)
        for (int m = 0; m <= M; ++m)
            for (int p = 0; p <= P; ++p) {
                const Vec& lf = pb.left_field.at(j, m, p);
                for (int i = 0; i < n; ++i) {
                    l_norm = std::max(l_norm, lf.segment(i * n, n).norm());
                    C_dl = std::max(C_dl, pb.coeff[i].at(j, m, p).norm());
                }
            }

    double sum_lf1 = 0.0, pw = 1.0;
    for (int k = 0; k <= n; ++k) {
        sum_lf1 += pw;
        pw *= LF1;
    }
    double c0 = 2.0 * (dom.T * l_norm * h0 + F0 + l_norm * u_inf) * sum_lf1;
    double c1 = 2.0 * (l_norm * Lsrc + C_dl) * sum_lf1;
    return {lhs, c0 * std::exp(dom.T * c1)};
}

} // namespace grpcalc

#endif // GRPCALC_BROAD_SOLUTION_HPP
