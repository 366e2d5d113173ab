// grpcalc command-line driver: config-driven runs of the GRP solver and its
// sensitivity calculus.  Subcommands: riemann | solve | sensitivity |
// gradient-check | convergence.  Exit codes: 0 success, 2 validation failure,
// 3 solver failure.  Outputs are written atomically (temp file + rename) and
// are byte-deterministic for identical configs.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "grpcalc/objective.hpp"

using json = nlohmann::json;
using namespace grpcalc;
namespace fs = std::filesystem;

namespace {

// validation problem tied to a config location, reported as a dotted pointer
struct ValidationError : std::runtime_error {
    ValidationError(const std::string& path, const std::string& msg)
        : std::runtime_error(path + ": " + msg) {}
};

const json& json_at(const json& j, const std::string& dotted) {
    const json* cur = &j;
    size_t pos = 0;
    while (true) {
        size_t dot = dotted.find('.', pos);
        std::string key = dotted.substr(pos, dot - pos);
        if (!cur->is_object() || !cur->contains(key))
            throw ValidationError(dotted, "missing required field");
        cur = &(*cur)[key];
        if (dot == std::string::npos) return *cur;
        pos = dot + 1;
    }
}

double get_num(const json& j, const std::string& path) {
    const json& v = json_at(j, path);
    if (!v.is_number()) throw ValidationError(path, "expected a number");
    return v.get<double>();
}

int get_int(const json& j, const std::string& path) {
    const json& v = json_at(j, path);
    if (!v.is_number_integer()) throw ValidationError(path, "expected an integer");
    return v.get<int>();
}

double get_num_or(const json& j, const std::string& path, double dflt) {
    try {
        json_at(j, path);
    } catch (const ValidationError&) {
        return dflt;
    }
    return get_num(j, path);
}

// polynomial control pieces: one coefficient list per component, c0 + c1 x + ...
std::vector<std::vector<double>> get_poly(const json& j, const std::string& path,
                                          int n) {
    const json& v = json_at(j, path);
    if (!v.is_array() || static_cast<int>(v.size()) != n)
        throw ValidationError(path, "expected " + std::to_string(n) +
                                        " coefficient lists");
    std::vector<std::vector<double>> c(n);
    for (int k = 0; k < n; ++k) {
        if (!v[k].is_array() || v[k].empty())
            throw ValidationError(path, "component " + std::to_string(k) +
                                            ": expected a non-empty array");
        for (const auto& e : v[k]) {
            if (!e.is_number())
                throw ValidationError(path, "non-numeric coefficient");
            c[k].push_back(e.get<double>());
        }
    }
    return c;
}

std::function<Vec(double)> poly_fn(std::vector<std::vector<double>> c) {
    return [c = std::move(c)](double x) {
        Vec y(static_cast<Eigen::Index>(c.size()));
        for (size_t k = 0; k < c.size(); ++k) {
            double v = 0.0;
            for (size_t d = c[k].size(); d-- > 0;) v = v * x + c[k][d];
            y[static_cast<Eigen::Index>(k)] = v;
        }
        return y;
    };
}

std::function<Vec(double)> poly_deriv_fn(const std::vector<std::vector<double>>& c) {
    std::vector<std::vector<double>> d(c.size());
    for (size_t k = 0; k < c.size(); ++k) {
        for (size_t deg = 1; deg < c[k].size(); ++deg)
            d[k].push_back(deg * c[k][deg]);
        if (d[k].empty()) d[k].push_back(0.0);
    }
    return poly_fn(std::move(d));
}

SystemModel build_model(const json& cfg) {
    const json& m = json_at(cfg, "model");
    std::string id;
    if (m.is_string())
        id = m.get<std::string>();
    else if (m.is_object())
        id = json_at(cfg, "model.id").get<std::string>();
    else
        throw ValidationError("model", "expected a string or an object with 'id'");
    if (id == "linear_diag") return linear_diag();
    if (id == "burgers_pair") return burgers_pair();
    if (id == "p_system")
        return p_system(get_num_or(cfg, "model.a", 1.0),
                        get_num_or(cfg, "model.v_ref", 1.0));
    throw ValidationError("model", "unknown model '" + id + "'");
}

struct Run {
    SystemModel model;
    Control control;
    ReferenceDomain dom;
    GrpParams params;
    fs::path out_dir;
};

Run build_run(const json& cfg, int grid_m_override, double tol_override,
              const std::string& out_override, int jobs) {
    Run r;
    r.model = build_model(cfg);
    int n = r.model.n;

    r.dom.T = get_num(cfg, "geometry.T");
    r.dom.ell = get_num(cfg, "geometry.ell");
    r.dom.eps = get_num(cfg, "geometry.eps");
    if (r.dom.T <= 0.0) throw ValidationError("geometry.T", "must be positive");
    if (r.dom.ell <= 0.0) throw ValidationError("geometry.ell", "must be positive");
    if (r.dom.eps <= 0.0 || r.dom.eps > r.dom.ell / 6.0)
        throw ValidationError("geometry.eps", "must lie in (0, ell/6]");

    r.dom.grid.M = get_int(cfg, "grid.M");
    r.dom.grid.P = get_int(cfg, "grid.P");
    if (grid_m_override > 0) r.dom.grid.M = r.dom.grid.P = grid_m_override;
    if (r.dom.grid.M < 4) throw ValidationError("grid.M", "must be >= 4");
    if (r.dom.grid.P < 4) throw ValidationError("grid.P", "must be >= 4");

    r.control.u_left = poly_fn(get_poly(cfg, "control.u_left", n));
    r.control.u_left_deriv = poly_deriv_fn(get_poly(cfg, "control.u_left", n));
    r.control.u_right = poly_fn(get_poly(cfg, "control.u_right", n));
    r.control.u_right_deriv = poly_deriv_fn(get_poly(cfg, "control.u_right", n));
    r.control.x0 = get_num(cfg, "control.x0");
    r.control.eps = r.dom.eps;
    r.control.ell = r.dom.ell;
    r.control.M0 = get_num(cfg, "admissibility.M0");
    r.control.M1 = get_num(cfg, "admissibility.M1");
    if (std::abs(r.control.x0) >= r.dom.eps)
        throw ValidationError("control.x0", "|x0| must be < eps");

    r.params.inner_tol = get_num_or(cfg, "tolerances.inner_tol", 1e-10);
    r.params.outer_tol = get_num_or(cfg, "tolerances.outer_tol", 1e-8);
    double newton_tol = get_num_or(cfg, "tolerances.newton_tol", 1e-10);
    r.params.c_y = get_num_or(cfg, "tolerances.c_y", 0.0);
    if (tol_override > 0.0) r.params.outer_tol = tol_override;
    if (r.params.inner_tol <= 0.0)
        throw ValidationError("tolerances.inner_tol", "must be positive");
    if (r.params.outer_tol <= 0.0)
        throw ValidationError("tolerances.outer_tol", "must be positive");
    if (newton_tol <= 0.0)
        throw ValidationError("tolerances.newton_tol", "must be positive");
    r.params.jobs = jobs;

    std::string dir = out_override;
    if (dir.empty()) {
        try {
            dir = json_at(cfg, "output.directory").get<std::string>();
        } catch (const ValidationError&) {
            dir = "out";
        }
    }
    r.out_dir = dir;
    return r;
}

// ---------------- deterministic output helpers ----------------

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void atomic_write(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        f << content;
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
}

json vec_json(const Vec& v) {
    json a = json::array();
    for (int k = 0; k < v.size(); ++k) a.push_back(v[k]);
    return a;
}

// ---------------- artifact writers ----------------

void write_solution_csv(const Run& r, const GrpSolution& sol) {
    int n = sol.model.n, M = sol.dom.grid.M, P = sol.dom.grid.P;
    double dt = sol.dom.dt();
    for (int j = 0; j < sol.dom.sectors(); ++j) {
        std::string s = "# schema: t,xbar,x";
        for (int k = 0; k < n; ++k) s += ",y" + std::to_string(k + 1);
        s += "\n";
        for (int m = 0; m <= M; ++m) {
            double t = m * dt;
            for (int p = 0; p <= P; ++p) {
                double sigma = static_cast<double>(p) / P;
                double xbar =
                    sol.dom.sector_left(j, t) + sigma * sol.dom.sector_width(j, t);
                double x = to_physical(sol.dom, sol.curves, j, t, xbar);
                s += fmt(t) + "," + fmt(xbar) + "," + fmt(x);
                const Vec& y = sol.ybar.at(j, m, p);
                for (int k = 0; k < n; ++k) s += "," + fmt(y[k]);
                s += "\n";
            }
        }
        atomic_write(r.out_dir / ("solution_sector" + std::to_string(j) + ".csv"),
                     s);
    }
}

void write_curves_csv(const Run& r, const GrpSolution& sol) {
    std::string s = "# schema: curve,t,xi,xi_dot\n";
    double dt = sol.dom.dt();
    for (int c = 0; c <= sol.dom.n + 1; ++c)
        for (int m = 0; m <= sol.dom.grid.M; ++m)
            s += std::to_string(c) + "," + fmt(m * dt) + "," +
                 fmt(sol.curves.xi[c][m]) + "," + fmt(sol.curves.xi_dot[c][m]) +
                 "\n";
    atomic_write(r.out_dir / "curves.csv", s);
}

void write_diagnostics(const Run& r, const GrpSolution& sol) {
    auto rep = entropy_and_rh_report(sol);
    json d;
    d["outer_residuals"] = sol.diagnostics.outer_residuals;
    d["inner_iterations"] = sol.diagnostics.inner_iterations;
    d["c_y"] = sol.diagnostics.c_y;
    d["pc0_norm"] = sol.ybar.pc0_norm();
    d["rh"] = {{"max", rep.max_rh}, {"tol", rep.rh_tol}};
    d["entropy"] = {{"min_own_margin", rep.min_own_margin},
                    {"min_cross_margin", rep.min_cross_margin},
                    {"tol", rep.entropy_tol}};
    d["pass"] = rep.pass;
    atomic_write(r.out_dir / "diagnostics.json", d.dump(2) + "\n");
}

ControlVariation parse_variation(const json& v, const std::string& path, int n) {
    ControlVariation var;
    var.du_left = poly_fn(get_poly(v, "du_left", n));
    var.du_right = poly_fn(get_poly(v, "du_right", n));
    var.dx0 = v.contains("dx0") ? v["dx0"].get<double>() : 0.0;
    (void)path;
    return var;
}

GrpSolution resolve_perturbed(const Run& r, const ControlVariation& var, double e) {
    Control c = r.control;
    c.u_left = [base = r.control.u_left, d = var.du_left, e](double x) {
        return Vec(base(x) + e * d(x));
    };
    c.u_right = [base = r.control.u_right, d = var.du_right, e](double x) {
        return Vec(base(x) + e * d(x));
    };
    c.x0 = r.control.x0 + e * var.dx0;
    ReferenceDomain dom = r.dom;
    return solve_grp(r.model, dom, c, r.params);
}

// ---------------- subcommands ----------------

int cmd_riemann(const json& cfg, const Run& r) {
    Vec uL = r.control.u_left(r.control.x0), uR = r.control.u_right(r.control.x0);
    RiemannFan fan = solve_riemann(r.model, uL, uR);
    json out;
    out["sigma"] = vec_json(fan.sigma);
    out["speeds"] = vec_json(fan.speeds);
    json states = json::array();
    for (const auto& y : fan.states) states.push_back(vec_json(y));
    out["states"] = states;
    json kinds = json::array();
    for (auto k : fan.kinds)
        kinds.push_back(k == WaveKind::Shock ? "shock" : "contact");
    out["kinds"] = kinds;
    (void)cfg;
    std::string text = out.dump(2) + "\n";
    atomic_write(r.out_dir / "riemann.json", text);
    std::fputs(text.c_str(), stdout);
    return 0;
}

int cmd_solve(const json& cfg, const Run& r) {
    (void)cfg;
    ReferenceDomain dom = r.dom;
    GrpSolution sol = solve_grp(r.model, dom, r.control, r.params);
    write_solution_csv(r, sol);
    write_curves_csv(r, sol);
    write_diagnostics(r, sol);
    return 0;
}

int cmd_sensitivity(const json& cfg, const Run& r) {
    const json& vj = json_at(cfg, "variation");
    ControlVariation var = parse_variation(vj, "variation", r.model.n);
    double fd_eps = get_num_or(cfg, "variation.fd_eps", 1e-4);

    ReferenceDomain dom = r.dom;
    GrpSolution sol = solve_grp(r.model, dom, r.control, r.params);
    SensitivityBundle bundle = solve_sensitivity(sol, var);

    int n = sol.model.n, M = sol.dom.grid.M, P = sol.dom.grid.P;
    double dt = sol.dom.dt();
    for (int j = 0; j < sol.dom.sectors(); ++j) {
        std::string s = "# schema: t,xbar";
        for (int k = 0; k < n; ++k) s += ",dy" + std::to_string(k + 1);
        s += "\n";
        for (int m = 0; m <= M; ++m) {
            double t = m * dt;
            for (int p = 0; p <= P; ++p) {
                double sigma = static_cast<double>(p) / P;
                double xbar =
                    sol.dom.sector_left(j, t) + sigma * sol.dom.sector_width(j, t);
                s += fmt(t) + "," + fmt(xbar);
                const Vec& y = bundle.dybar.at(j, m, p);
                for (int k = 0; k < n; ++k) s += "," + fmt(y[k]);
                s += "\n";
            }
        }
        atomic_write(r.out_dir / ("sensitivity_sector" + std::to_string(j) + ".csv"),
                     s);
    }

    std::string cs = "# schema: curve,t,dxi,dxi_dot\n";
    for (int c = 0; c <= sol.dom.n + 1; ++c)
        for (int m = 0; m <= M; ++m)
            cs += std::to_string(c) + "," + fmt(m * dt) + "," +
                  fmt(bundle.dxi[c][m]) + "," + fmt(bundle.dxi_dot[c][m]) + "\n";
    atomic_write(r.out_dir / "sensitivity_curves.csv", cs);

    auto md = measure_derivative(sol, bundle, sol.dom.T);
    std::string as = "# schema: shock,x";
    for (int k = 0; k < n; ++k) as += ",w" + std::to_string(k + 1);
    as += "\n";
    for (size_t c = 0; c < md.atom_x.size(); ++c) {
        as += std::to_string(c + 1) + "," + fmt(md.atom_x[c]);
        for (int k = 0; k < n; ++k) as += "," + fmt(md.atom_w[c][k]);
        as += "\n";
    }
    atomic_write(r.out_dir / "sensitivity_atoms.csv", as);

    // FD cross-check of the shock-position derivatives
    GrpSolution solp = resolve_perturbed(r, var, fd_eps);
    GrpSolution solm = resolve_perturbed(r, var, -fd_eps);
    json fd;
    fd["eps"] = fd_eps;
    json tangent = json::array(), quotient = json::array(), rel = json::array();
    for (int c = 1; c <= sol.dom.n; ++c) {
        double tg = bundle.dxi[c][M];
        double q = (solp.curves.xi[c][M] - solm.curves.xi[c][M]) / (2.0 * fd_eps);
        tangent.push_back(tg);
        quotient.push_back(q);
        rel.push_back(std::abs(tg - q) / std::max(1.0, std::abs(q)));
    }
    fd["dxi_tangent"] = tangent;
    fd["dxi_fd"] = quotient;
    fd["rel_err"] = rel;
    atomic_write(r.out_dir / "sensitivity_fd.json", fd.dump(2) + "\n");
    return 0;
}

int cmd_gradient_check(const json& cfg, const Run& r) {
    const json& oj = json_at(cfg, "objective");
    TrackingObjective obj;
    obj.a = get_num(cfg, "objective.a");
    obj.b = get_num(cfg, "objective.b");
    obj.phi = [](const Vec& y, const Vec& yd) { return (y - yd).squaredNorm(); };
    obj.dphi_dy = [](const Vec& y, const Vec& yd) { return Vec(2.0 * (y - yd)); };
    obj.y_target = poly_fn(get_poly(cfg, "objective.y_target", r.model.n));
    double fd_eps = get_num_or(cfg, "objective.fd_eps", 1e-4);
    const json& dirs = json_at(cfg, "objective.directions");
    if (!dirs.is_array() || dirs.empty())
        throw ValidationError("objective.directions", "expected a non-empty array");

    ReferenceDomain dom = r.dom;
    GrpSolution sol = solve_grp(r.model, dom, r.control, r.params);
    json out;
    out["J"] = evaluate(obj, sol);
    json rows = json::array();
    for (size_t k = 0; k < dirs.size(); ++k) {
        ControlVariation var = parse_variation(
            dirs[k], "objective.directions." + std::to_string(k), r.model.n);
        double g = gradient(obj, sol, var);
        double f = (evaluate(obj, resolve_perturbed(r, var, fd_eps)) -
                    evaluate(obj, resolve_perturbed(r, var, -fd_eps))) /
                   (2.0 * fd_eps);
        rows.push_back({{"dJ_tangent", g},
                        {"dJ_fd", f},
                        {"rel_err", std::abs(g - f) / std::max(1.0, std::abs(f))}});
    }
    out["directions"] = rows;
    atomic_write(r.out_dir / "gradient_check.json", out.dump(2) + "\n");
    return 0;
}

int cmd_convergence(const json& cfg, const Run& r, int levels) {
    if (levels <= 0) levels = static_cast<int>(get_num_or(cfg, "convergence.levels", 3));
    if (levels < 3) throw ValidationError("convergence.levels", "must be >= 3");

    std::vector<GrpSolution> sols;
    for (int k = 0; k < levels; ++k) {
        ReferenceDomain dom = r.dom;
        dom.grid.M = r.dom.grid.M << k;
        dom.grid.P = r.dom.grid.P << k;
        sols.push_back(solve_grp(r.model, dom, r.control, r.params));
    }

    // fixed off-shock sample line at the final time
    double T = r.dom.T;
    double lo = -r.dom.ell + r.model.lambda_max * T;
    double hi = r.dom.ell - r.model.lambda_max * T;
    double band = std::max(2.0 * r.dom.ell / r.dom.grid.P,
                           r.model.lambda_max * T / r.dom.grid.M);
    std::vector<double> xs;
    for (int k = 0; k <= 100; ++k) {
        double x = lo + (hi - lo) * (k + 0.5) / 101.0;
        bool ok = true;
        for (int c = 1; c <= sols[0].dom.n; ++c)
            if (std::abs(x - sols[0].curves.xi_at(c, T)) < band) ok = false;
        if (ok) xs.push_back(x);
    }

    bool oracle = false;  // closed-form transport only for the decoupled model
    try {
        oracle = json_at(cfg, "model").is_string() &&
                 json_at(cfg, "model").get<std::string>() == "linear_diag" &&
                 r.control.x0 == 0.0;
    } catch (const ValidationError&) {
    }
    auto exact = [&](double x) {
        double f1 = x + T, f2 = x - T;
        Vec y(2);
        y[0] = (f1 < 0.0 ? r.control.u_left : r.control.u_right)(f1)[0];
        y[1] = (f2 < 0.0 ? r.control.u_left : r.control.u_right)(f2)[1];
        return y;
    };

    std::vector<double> err_self(levels, -1.0), err_true(levels, -1.0);
    for (int k = 0; k < levels; ++k) {
        if (k >= 1) {
            double e = 0.0;
            for (double x : xs)
                e = std::max(e, (sample_physical(sols[k], T, x) -
                                 sample_physical(sols[k - 1], T, x))
                                    .cwiseAbs()
                                    .maxCoeff());
            err_self[k] = e;
        }
        if (oracle) {
            double e = 0.0;
            for (double x : xs)
                e = std::max(e, (sample_physical(sols[k], T, x) - exact(x))
                                    .cwiseAbs()
                                    .maxCoeff());
            err_true[k] = e;
        }
    }

    std::string s = "# schema: level,M,P,err_self,order_self,err_true,order_true\n";
    for (int k = 0; k < levels; ++k) {
        s += std::to_string(k) + "," + std::to_string(r.dom.grid.M << k) + "," +
             std::to_string(r.dom.grid.P << k) + ",";
        s += (err_self[k] >= 0.0 ? fmt(err_self[k]) : "") + std::string(",");
        s += (k >= 2 && err_self[k] > 0.0 && err_self[k - 1] > 0.0
                  ? fmt(std::log2(err_self[k - 1] / err_self[k]))
                  : "") +
             std::string(",");
        s += (err_true[k] >= 0.0 ? fmt(err_true[k]) : "") + std::string(",");
        s += (k >= 1 && err_true[k] > 0.0 && err_true[k - 1] > 0.0
                  ? fmt(std::log2(err_true[k - 1] / err_true[k]))
                  : "") +
             std::string("\n");
    }
    atomic_write(r.out_dir / "convergence.csv", s);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"GRP solver and sensitivity toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // accept global options after the subcommand name

    std::string config_path, out_override;
    int grid_m = 0, jobs = default_jobs(), levels = 0;
    double tol = 0.0;
    app.add_option("-c,--config", config_path, "JSON config file")->required();
    app.add_option("--out", out_override, "output directory override");
    app.add_option("--grid-m", grid_m, "override grid size (sets both M and P)");
    app.add_option("--tol", tol, "override the outer solver tolerance");
    app.add_option("--jobs", jobs, "worker threads (default: GRPCALC_JOBS)");

    auto* sub_riemann = app.add_subcommand("riemann", "nominal Riemann fan");
    auto* sub_solve = app.add_subcommand("solve", "full GRP solve");
    auto* sub_sens = app.add_subcommand("sensitivity", "tangent solve + FD check");
    auto* sub_grad =
        app.add_subcommand("gradient-check", "objective gradient vs FD");
    auto* sub_conv = app.add_subcommand("convergence", "grid refinement study");
    sub_conv->add_option("--levels", levels, "number of refinement levels (>= 3)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        json cfg;
        {
            std::ifstream f(config_path);
            if (!f) throw ValidationError("config", "cannot open " + config_path);
            try {
                cfg = json::parse(f);
            } catch (const json::parse_error& e) {
                throw ValidationError("config", e.what());
            }
        }
        Run r = build_run(cfg, grid_m, tol, out_override, jobs);
        if (sub_riemann->parsed()) return cmd_riemann(cfg, r);
        if (sub_solve->parsed()) return cmd_solve(cfg, r);
        if (sub_sens->parsed()) return cmd_sensitivity(cfg, r);
        if (sub_grad->parsed()) return cmd_gradient_check(cfg, r);
        if (sub_conv->parsed()) return cmd_convergence(cfg, r, levels);
        return 2;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return 2;
    } catch (const ArgumentOutOfDomain& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return 2;
    } catch (const DegenerateGeometry& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "solver error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
