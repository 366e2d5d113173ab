#ifndef GRPCALC_RIEMANN_FAN_HPP
#define GRPCALC_RIEMANN_FAN_HPP

#include <sstream>

#include "grpcalc/system_model.hpp"

namespace grpcalc {

enum class WaveKind { Shock, Contact };

struct RiemannFan {
    Vec sigma;                    // wave strengths
    std::vector<Vec> states;     // yhat_0 = uL, ..., yhat_n = uR
    std::vector<WaveKind> kinds;
    Vec speeds;                   // s_1 < ... < s_n, averaged-Jacobian eigenvalues
};

// The control triple (u_l, u_r, x0) with admissibility metadata.  u_l lives on
// [-ell, eps], u_r on [-eps, ell]; both supplied as value + derivative.
struct Control {
    std::function<Vec(double)> u_left, u_left_deriv;
    std::function<Vec(double)> u_right, u_right_deriv;
    double x0 = 0.0;
    double M0 = 0.0, M1 = 0.0, eps = 0.0, ell = 0.0;
};

inline Control constant_control(const Vec& uL, const Vec& uR, double x0, double eps,
                                double ell, double M0, double M1) {
    Control c;
    int n = static_cast<int>(uL.size());
    c.u_left = [uL](double) { return uL; };
    c.u_right = [uR](double) { return uR; };
    c.u_left_deriv = [n](double) { return Vec::Zero(n); };
    c.u_right_deriv = [n](double) { return Vec::Zero(n); };
    c.x0 = x0;
    c.eps = eps;
    c.ell = ell;
    c.M0 = M0;
    c.M1 = M1;
    return c;
}

// ============================================================
// Wave curves Psi_i
// ============================================================

namespace detail {

// Integral curve of r_i through base, d Psi / d sigma = r_i(Psi), RK4.
inline Vec integral_curve(const SystemModel& model, int i, double sigma,
                          const Vec& base, int substeps = 32) {
    Vec y = base;
    double h = sigma / substeps;
    for (int s = 0; s < substeps; ++s) {
        Vec k1 = eigen_decompose(model, y).right.col(i);
        Vec k2 = eigen_decompose(model, y + 0.5 * h * k1).right.col(i);
        Vec k3 = eigen_decompose(model, y + 0.5 * h * k2).right.col(i);
        Vec k4 = eigen_decompose(model, y + h * k3).right.col(i);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!model.in_box(y)) throw CurveLeftBox("integral curve left the working box");
    }
    return y;
}

// Hugoniot locus point: solves f(Psi) - f(base) = s (Psi - base) together with
// the parameterization constraint l_i(base)^T (Psi - base) = sigma by Newton on
// (Psi, s).  The constraint matches the integral-curve parameterization to
// first order, making shock and rarefaction branches join smoothly at sigma=0.
inline Vec hugoniot_point(const SystemModel& model, int i, double sigma,
                          const Vec& base, double* speed_out = nullptr) {
    int n = model.n;
    auto dec0 = eigen_decompose(model, base);
    Vec li = dec0.left.row(i);
    Vec y = base + sigma * dec0.right.col(i);
    double s = dec0.lambdas[i];
    Vec f0 = model.flux(base);
    for (int iter = 0; iter < 50; ++iter) {
        Vec res(n + 1);
        res.head(n) = model.flux(y) - f0 - s * (y - base);
        res[n] = li.dot(y - base) - sigma;
        if (res.cwiseAbs().maxCoeff() <= 1e-12) {
            if (!model.in_box(y)) throw CurveLeftBox("Hugoniot point left the working box");
            if (speed_out) *speed_out = s;
            return y;
        }
        Mat J = Mat::Zero(n + 1, n + 1);
        J.topLeftCorner(n, n) = model.flux_jacobian(y) - s * Mat::Identity(n, n);
        J.topRightCorner(n, 1) = -(y - base);
        J.bottomLeftCorner(1, n) = li.transpose();
        Vec step = J.fullPivLu().solve(res);
        y -= step.head(n);
        s -= step[n];
    }
    throw NewtonDivergence("Hugoniot Newton did not reach 1e-12 in 50 iterations");
}

} // namespace detail

// Psi_i(sigma)(base): integral curve for sigma >= 0 on GNL fields (and for all
// sigma on LD fields, where the branches coincide); Hugoniot locus for
// sigma < 0 on GNL fields.
inline Vec wave_curve(const SystemModel& model, int i, double sigma, const Vec& base) {
    if (sigma == 0.0) return base;
    if (model.field_kinds[i] == FieldKind::LinearlyDegenerate || sigma >= 0.0)
        return detail::integral_curve(model, i, sigma, base);
    return detail::hugoniot_point(model, i, sigma, base);
}

// Concatenated map Lambda(sigma)(uL).
inline Vec wave_map(const SystemModel& model, const Vec& sigma, const Vec& uL) {
    Vec y = uL;
    for (int i = 0; i < model.n; ++i) y = wave_curve(model, i, sigma[i], y);
    return y;
}

// ============================================================
// Riemann solver
// ============================================================

inline RiemannFan solve_riemann(const SystemModel& model, const Vec& uL,
                                const Vec& uR) {
    int n = model.n;
    Vec sigma = Vec::Zero(n);
    Vec res = wave_map(model, sigma, uL) - uR;
    double rnorm = res.cwiseAbs().maxCoeff();
    for (int iter = 0; iter < 50 && rnorm > 1e-10; ++iter) {
        Mat J(n, n);
        double h = 1e-7;
        for (int k = 0; k < n; ++k) {
            Vec sp = sigma, sm = sigma;
            sp[k] += h;
            sm[k] -= h;
            J.col(k) = (wave_map(model, sp, uL) - wave_map(model, sm, uL)) / (2.0 * h);
        }
        Vec step = J.fullPivLu().solve(res);
        double damping = 1.0;
        for (int halvings = 0; halvings <= 20; ++halvings) {
            Vec trial = sigma - damping * step;
            try {
                Vec tres = wave_map(model, trial, uL) - uR;
                double tnorm = tres.cwiseAbs().maxCoeff();
                if (tnorm < rnorm) {
                    sigma = trial;
                    res = tres;
                    rnorm = tnorm;
                    break;
                }
            } catch (const CurveLeftBox&) {
                // over-shot the working box; keep halving
            }
            if (halvings == 20)
                throw NewtonDivergence("Riemann Newton: no descent after 20 halvings");
            damping *= 0.5;
        }
    }
    if (rnorm > 1e-10)
        throw NewtonDivergence("Riemann Newton residual " + std::to_string(rnorm) +
                               " > 1e-10 after 50 iterations");

    for (int i = 0; i < n; ++i)
        if (model.field_kinds[i] == FieldKind::GenuinelyNonlinear && sigma[i] > 1e-10)
            throw RarefactionRequired("GNL field " + std::to_string(i + 1) +
                                      " has positive wave strength " +
                                      std::to_string(sigma[i]));

    RiemannFan fan;
    fan.sigma = sigma;
    fan.states.resize(n + 1);
    fan.states[0] = uL;
    for (int i = 0; i < n; ++i)
        fan.states[i + 1] = wave_curve(model, i, sigma[i], fan.states[i]);
    fan.speeds = Vec(n);
    fan.kinds.resize(n);
    for (int i = 0; i < n; ++i) {
        fan.speeds[i] = averaged_eigen(model, fan.states[i], fan.states[i + 1]).lambdas[i];
        fan.kinds[i] = model.field_kinds[i] == FieldKind::LinearlyDegenerate
                           ? WaveKind::Contact
                           : WaveKind::Shock;
    }

    // fan invariants
    for (int i = 0; i < n; ++i) {
        Vec rh = fan.speeds[i] * (fan.states[i + 1] - fan.states[i]) -
                 (model.flux(fan.states[i + 1]) - model.flux(fan.states[i]));
        if (rh.cwiseAbs().maxCoeff() > 1e-8)
            throw DegenerateGeometry("fan violates Rankine-Hugoniot");
        if (i + 1 < n && fan.speeds[i + 1] - fan.speeds[i] < model.eta_min / 2.0)
            throw DegenerateGeometry("fan speed gap below eta_min/2");
        if (model.field_kinds[i] == FieldKind::GenuinelyNonlinear) {
            double lam_m = eigen_decompose(model, fan.states[i]).lambdas[i];
            double lam_p = eigen_decompose(model, fan.states[i + 1]).lambdas[i];
            if (lam_m < fan.speeds[i] - 1e-8 || fan.speeds[i] < lam_p - 1e-8)
                throw DegenerateGeometry("fan violates Lax inequalities");
        }
    }
    return fan;
}

// ============================================================
// Admissibility
// ============================================================

struct AdmissibilityReport {
    bool pass = false;
    Vec nominal_sigma;
    std::vector<std::pair<double, std::string>> failures;  // (sample x, reason)
};

inline AdmissibilityReport validate_admissible_set(const SystemModel& model,
                                                   const Control& control,
                                                   const Vec& uL, const Vec& uR,
                                                   int n_samples) {
    AdmissibilityReport rep;
    rep.pass = true;
    try {
        RiemannFan fan = solve_riemann(model, uL, uR);
        rep.nominal_sigma = fan.sigma;
        for (int i = 0; i < model.n; ++i)
            if (model.field_kinds[i] == FieldKind::GenuinelyNonlinear &&
                fan.sigma[i] >= -1e-6) {
                rep.pass = false;
                rep.failures.push_back(
                    {control.x0, "nominal sigma_" + std::to_string(i + 1) +
                                     " not strictly negative"});
            }
    } catch (const Error& e) {
        rep.pass = false;
        rep.failures.push_back({control.x0, std::string("nominal pair: ") + e.what()});
    }
    for (int k = 0; k < n_samples; ++k) {
        double x = n_samples == 1
                       ? 0.0
                       : -control.eps + 2.0 * control.eps * k / (n_samples - 1);
        try {
            RiemannFan fan = solve_riemann(model, control.u_left(x), control.u_right(x));
            for (int i = 0; i < model.n; ++i)
                if (model.field_kinds[i] == FieldKind::GenuinelyNonlinear &&
                    fan.sigma[i] > 1e-10) {
                    rep.pass = false;
                    rep.failures.push_back(
                        {x, "sigma_" + std::to_string(i + 1) + " > 0 (rarefaction)"});
                }
        } catch (const Error& e) {
            rep.pass = false;
            rep.failures.push_back({x, e.what()});
        }
    }
    return rep;
}

// Averaged-Jacobian speed and the n-1 characteristic jump residuals
// l_i(y+,y-)^T (y+ - y-) for i != j.
inline std::pair<double, Vec> jump_condition_residual(const SystemModel& model,
                                                      const Vec& y_minus,
                                                      const Vec& y_plus, int j) {
    auto dec = averaged_eigen(model, y_minus, y_plus);
    Vec res(model.n - 1);
    int idx = 0;
    for (int i = 0; i < model.n; ++i) {
        if (i == j) continue;
        res[idx++] = dec.left.row(i).dot(y_plus - y_minus);
    }
    return {dec.lambdas[j], res};
}

} // namespace grpcalc

#endif // GRPCALC_RIEMANN_FAN_HPP
