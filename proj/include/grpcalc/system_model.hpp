#ifndef GRPCALC_SYSTEM_MODEL_HPP
#define GRPCALC_SYSTEM_MODEL_HPP

#include <Eigen/Eigenvalues>
#include <cmath>
#include <utility>

#include "grpcalc/core.hpp"

namespace grpcalc {

enum class FieldKind { GenuinelyNonlinear, LinearlyDegenerate };
enum class FieldClass { GenuinelyNonlinear, LinearlyDegenerate, Mixed };

struct EigenDecomposition {
    Vec lambdas;  // ascending, simple
    Mat right;    // columns r_i, |r_i| = 1
    Mat left;     // rows l_i, l_i^T r_j = delta_ij
};

// A hyperbolic system of balance laws y_t + f(y)_x = g(t,x,y) together with
// the structural metadata (speed bound, field intervals, field kinds) and a
// working box (L-inf ball of radius box_radius around box_center) on which
// strict hyperbolicity is guaranteed.
struct SystemModel {
    int n = 0;
    std::function<Vec(const Vec&)> flux;
    std::function<Mat(const Vec&)> flux_jacobian;  // set by finalize() if absent
    std::function<Vec(double, double, const Vec&)> source;  // g(t,x,y)
    double lambda_max = 0.0;
    std::vector<std::pair<double, double>> field_intervals;  // Lambda_i
    double eta_min = 0.0;
    std::vector<FieldKind> field_kinds;
    double box_radius = 1.0;
    Vec box_center;  // defaults to 0

    bool in_box(const Vec& y) const {
        for (int k = 0; k < n; ++k)
            if (std::abs(y[k] - box_center[k]) > box_radius) return false;
        return true;
    }

    // Fills defaults: FD Jacobian, zero source, zero box center.
    void finalize() {
        if (box_center.size() != n) box_center = Vec::Zero(n);
        if (!source)
            source = [dim = n](double, double, const Vec&) { return Vec::Zero(dim); };
        if (!flux_jacobian) {
            auto f = flux;
            int dim = n;
            flux_jacobian = [f, dim](const Vec& y) {
                Mat A(dim, dim);
                double h = 1e-7 * (1.0 + y.norm());
                for (int k = 0; k < dim; ++k) {
                    Vec yp = y, ym = y;
                    yp[k] += h;
                    ym[k] -= h;
                    A.col(k) = (f(yp) - f(ym)) / (2.0 * h);
                }
                return A;
            };
        }
    }
};

namespace detail {

// Applies the deterministic sign convention: first component of r_i with
// magnitude > 1e-8 made positive; the matching row of L flips with it.
inline void fix_signs(Mat& right, Mat& left) {
    int n = static_cast<int>(right.cols());
    for (int i = 0; i < n; ++i) {
        double lead = 0.0;
        for (int k = 0; k < n; ++k) {
            if (std::abs(right(k, i)) > 1e-8) {
                lead = right(k, i);
                break;
            }
        }
        if (lead < 0.0) {
            right.col(i) *= -1.0;
            left.row(i) *= -1.0;
        }
    }
}

inline EigenDecomposition decompose_2x2(const Mat& A) {
    double a = A(0, 0), b = A(0, 1), c = A(1, 0), d = A(1, 1);
    double tr = a + d;
    double disc = (a - d) * (a - d) + 4.0 * b * c;
    if (disc <= 1e-16 * (1.0 + tr * tr))
        throw NotStrictlyHyperbolic("2x2 Jacobian has non-real or coincident eigenvalues");
    double sq = std::sqrt(disc);
    EigenDecomposition dec;
    dec.lambdas = Vec(2);
    dec.lambdas[0] = 0.5 * (tr - sq);
    dec.lambdas[1] = 0.5 * (tr + sq);
    if (dec.lambdas[1] - dec.lambdas[0] < 1e-8)
        throw NotStrictlyHyperbolic("eigenvalue gap below 1e-8");
    dec.right = Mat(2, 2);
    for (int i = 0; i < 2; ++i) {
        double lam = dec.lambdas[i];
        Vec r(2);
        if (std::abs(b) >= std::abs(c)) {
            r << b, lam - a;
            if (r.norm() < 1e-14) r << 1.0, 0.0;  // diagonal matrix, b = 0
        } else {
            r << lam - d, c;
            if (r.norm() < 1e-14) r << 0.0, 1.0;
        }
        dec.right.col(i) = r / r.norm();
    }
    double det = dec.right(0, 0) * dec.right(1, 1) - dec.right(0, 1) * dec.right(1, 0);
    if (std::abs(det) < 1e-12)
        throw NotStrictlyHyperbolic("degenerate eigenvector basis");
    dec.left = Mat(2, 2);
    dec.left(0, 0) = dec.right(1, 1) / det;
    dec.left(0, 1) = -dec.right(0, 1) / det;
    dec.left(1, 0) = -dec.right(1, 0) / det;
    dec.left(1, 1) = dec.right(0, 0) / det;
    fix_signs(dec.right, dec.left);
    return dec;
}

inline EigenDecomposition decompose_general(const Mat& A) {
    int n = static_cast<int>(A.rows());
    Eigen::EigenSolver<Mat> es(A);
    if (es.info() != Eigen::Success)
        throw NonConvergence("eigen iteration failed to converge");
    Vec re = es.eigenvalues().real();
    Vec im = es.eigenvalues().imag();
    for (int i = 0; i < n; ++i)
        if (std::abs(im[i]) > 1e-10 * (1.0 + std::abs(re[i])))
            throw NotStrictlyHyperbolic("complex eigenvalue encountered");
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int i, int j) { return re[i] < re[j]; });
    EigenDecomposition dec;
    dec.lambdas = Vec(n);
    dec.right = Mat(n, n);
    for (int i = 0; i < n; ++i) {
        dec.lambdas[i] = re[order[i]];
        Vec r = es.eigenvectors().col(order[i]).real();
        dec.right.col(i) = r / r.norm();
    }
    for (int i = 0; i + 1 < n; ++i)
        if (dec.lambdas[i + 1] - dec.lambdas[i] < 1e-8)
            throw NotStrictlyHyperbolic("eigenvalue gap below 1e-8");
    dec.left = dec.right.inverse();
    fix_signs(dec.right, dec.left);
    return dec;
}

} // namespace detail

inline EigenDecomposition decompose_matrix(const Mat& A) {
    return A.rows() == 2 ? detail::decompose_2x2(A) : detail::decompose_general(A);
}

inline EigenDecomposition eigen_decompose(const SystemModel& model, const Vec& y) {
    return decompose_matrix(model.flux_jacobian(y));
}

// Averaged Jacobian A(y1,y2) = int_0^1 A(s*y1 + (1-s)*y2) ds by 5-node
// Gauss-Legendre; exact for the affine Jacobians of the builtin systems.
inline Mat averaged_jacobian(const SystemModel& model, const Vec& y1, const Vec& y2) {
    Mat acc = Mat::Zero(model.n, model.n);
    for (int q = 0; q < Gauss5::count; ++q) {
        double s = Gauss5::nodes()[q];
        acc += Gauss5::weights()[q] * model.flux_jacobian(s * y1 + (1.0 - s) * y2);
    }
    return acc;
}

inline EigenDecomposition averaged_eigen(const SystemModel& model, const Vec& y1,
                                         const Vec& y2) {
    return decompose_matrix(averaged_jacobian(model, y1, y2));
}

// ----- eigen-structure derivatives (central finite differences) -----

inline double fd_step(const Vec& y) { return 1e-5 * (1.0 + y.norm()); }

// Gradient of lambda_i(y) w.r.t. y.
inline Vec grad_lambda(const SystemModel& model, int i, const Vec& y) {
    double h = fd_step(y);
    Vec g(model.n);
    for (int k = 0; k < model.n; ++k) {
        Vec yp = y, ym = y;
        yp[k] += h;
        ym[k] -= h;
        g[k] = (eigen_decompose(model, yp).lambdas[i] -
                eigen_decompose(model, ym).lambdas[i]) / (2.0 * h);
    }
    return g;
}

// Jacobian of y -> l_i(y): entry (r, k) = d l_i[r] / d y_k.
inline Mat grad_left_eigenvector(const SystemModel& model, int i, const Vec& y) {
    double h = fd_step(y);
    Mat g(model.n, model.n);
    for (int k = 0; k < model.n; ++k) {
        Vec yp = y, ym = y;
        yp[k] += h;
        ym[k] -= h;
        Vec lp = eigen_decompose(model, yp).left.row(i);
        Vec lm = eigen_decompose(model, ym).left.row(i);
        g.col(k) = (lp - lm) / (2.0 * h);
    }
    return g;
}

// Gradient of the averaged eigenvalue lambda_j(y1,y2) w.r.t. both arguments.
inline std::pair<Vec, Vec> grad_averaged_lambda(const SystemModel& model, int j,
                                                const Vec& y1, const Vec& y2) {
    double h = 1e-6 * (1.0 + std::max(y1.norm(), y2.norm()));
    Vec g1(model.n), g2(model.n);
    for (int k = 0; k < model.n; ++k) {
        Vec p = y1, m = y1;
        p[k] += h;
        m[k] -= h;
        g1[k] = (averaged_eigen(model, p, y2).lambdas[j] -
                 averaged_eigen(model, m, y2).lambdas[j]) / (2.0 * h);
        p = y2;
        m = y2;
        p[k] += h;
        m[k] -= h;
        g2[k] = (averaged_eigen(model, y1, p).lambdas[j] -
                 averaged_eigen(model, y1, m).lambdas[j]) / (2.0 * h);
    }
    return {g1, g2};
}

// Directional derivative of the Jacobian field: d/de A(y + e*dy) at e=0.
inline Mat jacobian_directional(const SystemModel& model, const Vec& y, const Vec& dy) {
    double scale = dy.norm();
    if (scale < 1e-300) return Mat::Zero(model.n, model.n);
    double h = 1e-6 * (1.0 + y.norm()) / scale;
    return (model.flux_jacobian(y + h * dy) - model.flux_jacobian(y - h * dy)) /
           (2.0 * h);
}

// ----- field classification -----

struct SampleBox {
    Vec lo, hi;
};

inline std::vector<FieldClass> classify_fields(const SystemModel& model,
                                               const SampleBox& box, int grid_count) {
    if (grid_count < 2) throw ConfigError("classify_fields: grid_count must be >= 2");
    std::vector<FieldClass> out(model.n);
    double width = (box.hi - box.lo).maxCoeff();
    double h = 1e-5 * width;
    // enumerate the tensor grid
    std::vector<Vec> points;
    std::vector<int> idx(model.n, 0);
    for (;;) {
        Vec y(model.n);
        for (int k = 0; k < model.n; ++k)
            y[k] = box.lo[k] + (box.hi[k] - box.lo[k]) * idx[k] / (grid_count - 1);
        points.push_back(y);
        int k = 0;
        while (k < model.n && ++idx[k] == grid_count) idx[k++] = 0;
        if (k == model.n) break;
    }
    for (int i = 0; i < model.n; ++i) {
        bool all_pos = true, all_neg = true, all_tiny = true;
        for (const Vec& y : points) {
            auto dec = eigen_decompose(model, y);
            Vec r = dec.right.col(i);
            double gl = 0.0;
            for (int k = 0; k < model.n; ++k) {
                Vec yp = y, ym = y;
                yp[k] += h;
                ym[k] -= h;
                gl += r[k] * (eigen_decompose(model, yp).lambdas[i] -
                              eigen_decompose(model, ym).lambdas[i]) / (2.0 * h);
            }
            all_pos &= (gl > 1e-6);
            all_neg &= (gl < -1e-6);
            all_tiny &= (std::abs(gl) < 1e-8);
        }
        out[i] = all_tiny ? FieldClass::LinearlyDegenerate
                          : ((all_pos || all_neg) ? FieldClass::GenuinelyNonlinear
                                                  : FieldClass::Mixed);
    }
    return out;
}

// ----- constant-shift normalization -----

inline SystemModel shift_system(const SystemModel& model, const Vec& c) {
    SystemModel out = model;
    auto f = model.flux;
    auto A = model.flux_jacobian;
    auto g = model.source;
    out.flux = [f, c](const Vec& y) { return f(y + c); };
    out.flux_jacobian = [A, c](const Vec& y) { return A(y + c); };
    out.source = [g, c](double t, double x, const Vec& y) { return g(t, x, y + c); };
    out.box_center = model.box_center - c;
    return out;
}

// ----- builtin models -----

// Decoupled pair of linear advections: f(y) = (-y1, y2).
inline SystemModel linear_diag() {
    SystemModel m;
    m.n = 2;
    m.flux = [](const Vec& y) {
        Vec f(2);
        f << -y[0], y[1];
        return f;
    };
    m.flux_jacobian = [](const Vec&) {
        Mat A(2, 2);
        A << -1.0, 0.0, 0.0, 1.0;
        return A;
    };
    m.lambda_max = 1.0;
    m.field_intervals = {{-1.0, -1.0}, {1.0, 1.0}};
    m.eta_min = 2.0;
    m.field_kinds = {FieldKind::LinearlyDegenerate, FieldKind::LinearlyDegenerate};
    m.box_radius = 2.0;
    m.finalize();
    return m;
}

// Decoupled pair of shifted Burgers equations:
// f(y) = (y1^2/2 - y1, y2^2/2 + y2), Jacobian diag(y1 - 1, y2 + 1).
inline SystemModel burgers_pair(double box_radius = 0.5) {
    SystemModel m;
    m.n = 2;
    m.flux = [](const Vec& y) {
        Vec f(2);
        f << 0.5 * y[0] * y[0] - y[0], 0.5 * y[1] * y[1] + y[1];
        return f;
    };
    m.flux_jacobian = [](const Vec& y) {
        Mat A(2, 2);
        A << y[0] - 1.0, 0.0, 0.0, y[1] + 1.0;
        return A;
    };
    m.lambda_max = 1.0 + box_radius;
    m.field_intervals = {{-1.0 - box_radius, -1.0 + box_radius},
                         {1.0 - box_radius, 1.0 + box_radius}};
    m.eta_min = 2.0 * (1.0 - box_radius);
    m.field_kinds = {FieldKind::GenuinelyNonlinear, FieldKind::GenuinelyNonlinear};
    m.box_radius = box_radius;
    m.finalize();
    return m;
}

// p-system with p(v) = a^2/v in shifted variables y = (v - v_ref, w):
// f(y) = (-y2, a^2/(y1 + v_ref)), eigenvalues -/+ a/(y1 + v_ref).
inline SystemModel p_system(double a = 1.0, double v_ref = 1.0,
                            double box_radius = 0.3) {
    if (v_ref - box_radius <= 0.0)
        throw ConfigError("p_system: working box must keep v positive");
    SystemModel m;
    m.n = 2;
    m.flux = [a, v_ref](const Vec& y) {
        Vec f(2);
        f << -y[1], a * a / (y[0] + v_ref);
        return f;
    };
    m.flux_jacobian = [a, v_ref](const Vec& y) {
        double v = y[0] + v_ref;
        Mat A(2, 2);
        A << 0.0, -1.0, -a * a / (v * v), 0.0;
        return A;
    };
    double lam_hi = a / (v_ref - box_radius);
    double lam_lo = a / (v_ref + box_radius);
    m.lambda_max = lam_hi;
    m.field_intervals = {{-lam_hi, -lam_lo}, {lam_lo, lam_hi}};
    m.eta_min = 2.0 * lam_lo;
    m.field_kinds = {FieldKind::GenuinelyNonlinear, FieldKind::GenuinelyNonlinear};
    m.box_radius = box_radius;
    m.finalize();
    return m;
}

} // namespace grpcalc

#endif // GRPCALC_SYSTEM_MODEL_HPP
