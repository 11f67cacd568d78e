#pragma once

// The run pipeline behind the command-line tool: config -> spec ->
// subsolution validation -> continuity solve -> monitors -> CSV fields and a
// JSON run log.

#include "pma/config.hpp"
#include "pma/error.hpp"
#include "pma/monitors.hpp"
#include "pma/presets.hpp"
#include "pma/problem.hpp"
#include "pma/solver.hpp"
#include "pma/spectral_operator.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace pma {

namespace exit_code {
constexpr int ok = 0;
constexpr int monitor_failure = 1;
constexpr int validation_failure = 2;
constexpr int homotopy_stall = 3;
constexpr int config_error = 4;
} // namespace exit_code

using json = nlohmann::json;

struct RunOverrides {
    std::optional<int> grid;
    std::optional<int> p;
    std::optional<int> continuity_steps;
    std::optional<double> tol;
    std::optional<int> max_newton;
    std::optional<DiagnosticsLevel> diagnostics;
    std::optional<std::uint64_t> seed;
    std::optional<std::vector<std::string>> dump_fields;
    std::optional<std::string> out_dir;
};

inline void apply_overrides(RunConfig& cfg, const RunOverrides& o) {
    if (o.grid) cfg.problem.shape.assign(static_cast<std::size_t>(cfg.problem.n), *o.grid);
    if (o.p) cfg.problem.p = *o.p;
    if (o.continuity_steps) cfg.solver.continuity_steps = *o.continuity_steps;
    if (o.tol) cfg.solver.tol_newton = *o.tol;
    if (o.max_newton) cfg.solver.max_newton = *o.max_newton;
    if (o.diagnostics) cfg.diagnostics.level = *o.diagnostics;
    if (o.seed) {
        cfg.diagnostics.seed = *o.seed;
        cfg.solver.seed = *o.seed;
    }
    if (o.dump_fields) cfg.output.fields = *o.dump_fields;
    if (o.out_dir) cfg.output.dir = *o.out_dir;
}

// CSV fields.

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Header "x1,...,xn,value", one row per grid point in row-major order.
inline void write_field_csv(const std::filesystem::path& path, const Grid& grid, std::span<const double> values) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::io_error, "cannot write '" + path.string() + "'");
    const int n = grid.dim();
    for (int a = 0; a < n; ++a) out << 'x' << (a + 1) << ',';
    out << "value\n";
    std::string line;
    for (std::size_t idx = 0; idx < grid.size(); ++idx) {
        line.clear();
        for (int a = 0; a < n; ++a) {
            line += format_double(grid.coord(idx, a));
            line += ',';
        }
        line += format_double(values[idx]);
        line += '\n';
        out << line;
    }
    if (!out) throw Error(ErrorCode::io_error, "write failed for '" + path.string() + "'");
}

struct CsvField {
    int n = 0;
    std::vector<std::vector<double>> points;
    std::vector<double> values;
};

inline CsvField read_field_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_error, "cannot read '" + path.string() + "'");
    CsvField f;
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::io_error, "empty CSV '" + path.string() + "'");
    f.n = static_cast<int>(std::count(line.begin(), line.end(), ','));
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        const char* s = line.c_str();
        char* end = nullptr;
        for (;;) {
            row.push_back(std::strtod(s, &end));
            if (*end != ',') break;
            s = end + 1;
        }
        if (static_cast<int>(row.size()) != f.n + 1)
            throw Error(ErrorCode::io_error, "malformed CSV row in '" + path.string() + "'");
        f.values.push_back(row.back());
        row.pop_back();
        f.points.push_back(std::move(row));
    }
    return f;
}

// JSON helpers.

inline std::string describe_point(const Grid& grid, std::size_t idx) {
    std::ostringstream os;
    os << "point " << idx << " (";
    for (int a = 0; a < grid.dim(); ++a) os << (a ? ", " : "") << 'x' << (a + 1) << '=' << grid.coord(idx, a);
    os << ')';
    return os.str();
}

inline json point_json(const Grid& grid, std::size_t idx) {
    json x = json::array();
    for (int a = 0; a < grid.dim(); ++a) x.push_back(grid.coord(idx, a));
    return json{{"index", idx}, {"x", x}};
}

inline json issues_json(const Grid& grid, const std::vector<PointIssue>& issues, std::size_t limit = 50) {
    json arr = json::array();
    for (std::size_t i = 0; i < issues.size() && i < limit; ++i) {
        auto j = point_json(grid, issues[i].index);
        j["kind"] = issues[i].kind;
        j["margin"] = issues[i].margin;
        arr.push_back(j);
    }
    return arr;
}

inline json config_json(const RunConfig& cfg) {
    const auto& d = cfg.problem;
    json metric{{"type", d.metric.kind == MetricKind::identity    ? "identity"
                         : d.metric.kind == MetricKind::conformal ? "conformal"
                                                                  : "entries"}};
    if (d.metric.kind == MetricKind::conformal) metric["sigma"] = d.metric.sigma;
    if (d.metric.kind == MetricKind::entries) metric["entries"] = d.metric.entries;
    json problem{{"name", d.name},  {"n", d.n},
                 {"p", d.p},        {"grid", resolved_shape(d)},
                 {"metric", metric}, {"A", d.A},
                 {"subsolution_tol", d.subsolution_tol}};
    if (d.manufactured) {
        problem["manufactured"] = {{"u_star", d.manufactured->u_star},
                                   {"beta", d.manufactured->beta},
                                   {"rhs", d.manufactured->rhs == oracles::RhsSource::continuum ? "continuum"
                                                                                                  : "discrete"}};
    } else {
        problem["f"] = d.f;
        problem["phi"] = d.phi;
        problem["subsolution"] = d.subsolution.empty() ? d.phi : d.subsolution;
    }
    const auto& s = cfg.solver;
    json solver{{"continuity_steps", s.continuity_steps}, {"tol_newton", s.tol_newton},
                {"max_newton", s.max_newton},             {"max_bisections", s.max_bisections},
                {"linear_solver", to_string(s.linear_solver)}, {"krylov_tol", s.krylov_tol},
                {"krylov_max_iter", s.krylov_max_iter},   {"check_jacobian", s.check_jacobian}};
    json diag{{"level", to_string(cfg.diagnostics.level)},
              {"seed", cfg.diagnostics.seed},
              {"tol_c0", cfg.diagnostics.tol_c0},
              {"samples", cfg.diagnostics.samples}};
    if (cfg.diagnostics.collar) diag["collar"] = *cfg.diagnostics.collar;
    return json{{"problem", problem},
                {"solver", solver},
                {"output", {{"dir", cfg.output.dir}, {"fields", cfg.output.fields}}},
                {"diagnostics", diag}};
}

inline json newton_json(const std::vector<NewtonRecord>& trace) {
    json arr = json::array();
    for (const auto& r : trace) {
        json j{{"iteration", r.iteration},   {"residual_sup", r.residual_sup}, {"residual_l2", r.residual_l2},
               {"step", r.step},             {"cone_margin", r.cone_margin},   {"line_search_trials", r.line_search_trials}};
        if (!std::isnan(r.jacobian_check)) j["jacobian_check"] = r.jacobian_check;
        arr.push_back(j);
    }
    return arr;
}

inline json continuity_json(const ContinuityResult& r) {
    json hom = json::array();
    for (const auto& h : r.log) {
        json j{{"t_from", h.t_from},
               {"t_to", h.t_to},
               {"accepted", h.accepted},
               {"newton_iterations", h.newton_iterations},
               {"damping", h.damping},
               {"residual_sup", h.residual_sup},
               {"cone_margin", h.cone_margin},
               {"newton", newton_json(h.trace)}};
        if (!h.failure.empty()) j["failure"] = h.failure;
        hom.push_back(j);
    }
    return json{{"anchor_residual", r.anchor_residual},
                {"t", r.state.t},
                {"residual_sup", r.state.residual_sup},
                {"residual_l2", r.state.residual_l2},
                {"cone_margin", r.state.cone_margin},
                {"bisections", r.bisections},
                {"homotopy", hom}};
}

inline std::string iso_time(std::chrono::system_clock::time_point tp) {
    const std::time_t t = std::chrono::system_clock::to_time_t(tp);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Diagnostics.

inline json condition_json(const ConditionResult& c) {
    return json{{"passed", c.passed}, {"worst_margin", c.worst_margin}, {"failures", c.failures}};
}

struct DiagnosticsOutcome {
    json report = json::object();
    bool passed = true;
    std::vector<std::string> messages;
    std::vector<double> h;
};

inline DiagnosticsOutcome run_diagnostics(const ProblemSpec& spec, const std::vector<double>& u, const RunConfig& cfg) {
    DiagnosticsOutcome out;
    const auto level = cfg.diagnostics.level;
    const auto& grid = spec.grid;
    if (level == DiagnosticsLevel::off) return out;

    out.h = supersolution_h(spec, cfg.solver);
    const double hres = supersolution_residual(spec, out.h);
    const auto c0 = c0_sandwich(u, spec.subsolution, out.h, cfg.diagnostics.tol_c0);
    const auto db = derivative_bounds(u, spec);
    const double bmargin = boundary_cone_margin(u, spec);

    json c0j{{"lower", c0.lower},
             {"upper", c0.upper},
             {"lower_at", point_json(grid, c0.lower_at)},
             {"upper_at", point_json(grid, c0.upper_at)},
             {"tol", cfg.diagnostics.tol_c0},
             {"passed", c0.passed},
             {"violations", issues_json(grid, c0.violations)}};
    out.report["c0_sandwich"] = c0j;
    out.report["supersolution_residual"] = hres;
    out.report["derivative_bounds"] = {{"grad_sup_interior", db.grad_sup_interior},
                                       {"grad_sup_boundary", db.grad_sup_boundary},
                                       {"hess_sup_interior", db.hess_sup_interior},
                                       {"hess_sup_boundary", db.hess_sup_boundary},
                                       {"grad_ratio", db.grad_ratio},
                                       {"hess_ratio", db.hess_ratio}};
    out.report["boundary_cone_margin"] = bmargin;
    out.report["augmentation"] = spec.A.zero()       ? "none"
                                 : spec.A.chi_only() ? "chi(x)"
                                                     : "A(x,z,p)";
    if (!c0.passed) {
        out.passed = false;
        for (std::size_t i = 0; i < c0.violations.size() && i < 20; ++i)
            out.messages.push_back("C0 sandwich " + c0.violations[i].kind + " bound violated at " +
                                   describe_point(grid, c0.violations[i].index) +
                                   ": margin " + format_double(c0.violations[i].margin));
    }
    if (hres > 1e-10) {
        out.passed = false;
        out.messages.push_back("supersolution residual " + format_double(hres) + " exceeds 1e-10");
    }
    if (level != DiagnosticsLevel::full) return out;

    // Barrier certificate.
    const double delta = cfg.diagnostics.collar.value_or(default_collar(grid));
    const auto bs = barrier_search(u, spec, delta);
    json tried = json::array();
    for (const auto& r : bs.tried)
        tried.push_back({{"t_bar", r.t_bar}, {"N_bar", r.N_bar}, {"min_v", r.min_v},
                         {"max_Lv_ratio", r.max_Lv_ratio}, {"certificate", r.certificate}});
    out.report["barrier"] = {{"delta", delta},
                             {"found", bs.found},
                             {"t_bar", bs.best.t_bar},
                             {"N_bar", bs.best.N_bar},
                             {"min_v", bs.best.min_v},
                             {"max_Lv_ratio", bs.best.max_Lv_ratio},
                             {"collar_points", bs.best.collar_points},
                             {"tried", tried}};

    // Structure conditions, nu0 and interlacing on solution spectra.
    const auto& interior = grid.interior();
    std::mt19937_64 rng(cfg.diagnostics.seed);
    std::vector<std::size_t> picks(interior);
    std::shuffle(picks.begin(), picks.end(), rng);
    if (picks.size() > cfg.diagnostics.samples) picks.resize(cfg.diagnostics.samples);
    std::sort(picks.begin(), picks.end());
    std::vector<Spectrum> spectra;
    double nu0 = std::numeric_limits<double>::infinity();
    double interlace = -std::numeric_limits<double>::infinity();
    for (std::size_t idx : picks) {
        const auto lo = local_operator(spec, u, idx);
        if (!(lo.margin > 0.0)) continue;
        spectra.emplace_back(lo.spectrum, true);
        if (auto r = nu0_ratio(lo.spectrum, spec.cone)) nu0 = std::min(nu0, *r);
        const auto linv = spec.metric.chol_inv(idx);
        interlace = std::max(interlace, interlacing_violation(linv * lo.U * linv.transpose()));
    }
    const auto sr = check_structure(spectra, spec.cone, 1e-9);
    out.report["structure"] = {{"samples", sr.samples},
                               {"pairs", sr.pairs},
                               {"passed", sr.passed()},
                               {"homogeneity", condition_json(sr.homogeneity)},
                               {"euler", condition_json(sr.euler)},
                               {"sum_grad", condition_json(sr.sum_grad)},
                               {"concavity", condition_json(sr.concavity)},
                               {"positivity", condition_json(sr.positivity)}};
    out.report["nu0_min"] = nu0;
    out.report["interlacing_max_violation"] = interlace;

    // f_z sign and growth exponent over a box around the solution's range.
    double zlo = *std::min_element(u.begin(), u.end()), zhi = *std::max_element(u.begin(), u.end());
    const double pmax = 1.0 + db.grad_sup_interior + db.grad_sup_boundary;
    const auto envs = sample_environments(spec, cfg.diagnostics.samples, cfg.diagnostics.seed, zlo, zhi, pmax);
    const auto fz = fz_positivity_diagnostic(spec, envs);
    out.report["fz"] = {{"samples", fz.samples},
                        {"min_fz", fz.min_fz},
                        {"max_neg_fz_over_f", fz.max_neg_fz_over_f},
                        {"uniqueness_guaranteed", fz.uniqueness_guaranteed}};
    std::size_t centre = 0;
    for (int a = 0; a < grid.dim(); ++a) centre += static_cast<std::size_t>(grid.shape()[a] / 2) * grid.stride(a);
    try {
        out.report["growth_exponent"] = growth_exponent(spec, centre, u[centre]);
    } catch (const Error& e) {
        out.report["growth_exponent"] = nullptr;
        out.report["growth_exponent_error"] = e.what();
    }
    return out;
}

// Pipeline.

struct RunOutcome {
    int exit_code = exit_code::ok;
    json log;
    std::optional<ContinuityResult> result;
    std::vector<double> h;
};

namespace run_detail {

inline void write_fields(const RunConfig& cfg, const ProblemSpec& spec, const std::vector<double>& u, double t,
                         const std::vector<double>& h, const std::optional<std::vector<double>>& u_star, json& log,
                         std::ostream& err) {
    namespace fs = std::filesystem;
    const fs::path dir(cfg.output.dir);
    fs::create_directories(dir);
    json written = json::object();
    const auto& grid = spec.grid;
    for (const auto& name : cfg.output.fields) {
        std::vector<double> field;
        if (name == "u") field = u;
        else if (name == "u_sub") field = spec.subsolution;
        else if (name == "h") {
            if (h.empty()) field = supersolution_h(spec, cfg.solver);
            else field = h;
        } else if (name == "residual") {
            const DiscreteOperator op(spec);
            field = op.residual(u, t).residual;
        } else if (name == "margin") {
            field.assign(grid.size(), 0.0);
            for (std::size_t idx : grid.interior()) field[idx] = local_operator(spec, u, idx).margin;
        } else if (name == "u_star" || name == "error") {
            if (!u_star) {
                err << "warning: field '" << name << "' needs a manufactured problem; skipped\n";
                continue;
            }
            field = *u_star;
            if (name == "error")
                for (std::size_t i = 0; i < field.size(); ++i) field[i] = u[i] - field[i];
        }
        const auto file = dir / (name + ".csv");
        write_field_csv(file, grid, field);
        written[name] = (name + ".csv");
    }
    log["outputs"] = written;
}

inline void write_log(const RunConfig& cfg, json& log) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output.dir);
    std::ofstream out(fs::path(cfg.output.dir) / "run_log.json");
    if (!out) throw Error(ErrorCode::io_error, "cannot write run log in '" + cfg.output.dir + "'");
    out << log.dump(2) << '\n';
}

} // namespace run_detail

/// Runs the pipeline on a parsed config. Messages go to err, a summary to out.
inline RunOutcome run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const auto started = std::chrono::system_clock::now();
    const auto t0 = std::chrono::steady_clock::now();
    RunOutcome res;
    json& log = res.log;
    log["config"] = config_json(cfg);
    auto finish = [&](int code, const std::string& message) {
        res.exit_code = code;
        log["exit_code"] = code;
        log["message"] = message;
        const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log["timestamps"] = {{"started", iso_time(started)},
                             {"finished", iso_time(std::chrono::system_clock::now())},
                             {"elapsed_seconds", elapsed}};
        run_detail::write_log(cfg, log);
    };

    std::optional<BuiltProblem> built;
    try {
        validate_config(cfg);
        built = build_problem(cfg.problem);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::inadmissible_ustar) {
            err << "error: " << e.what() << '\n';
            json pts = json::array();
            for (std::size_t i = 0; i < e.points().size() && i < 50; ++i) {
                const Grid g(cfg.problem.n, resolved_shape(cfg.problem));
                err << "  " << describe_point(g, e.points()[i]) << '\n';
                pts.push_back(point_json(g, e.points()[i]));
            }
            log["validation"] = {{"passed", false}, {"error", e.what()}, {"failures", pts}};
            finish(exit_code::validation_failure, e.what());
            return res;
        }
        if (e.code() == ErrorCode::metric_not_spd) {
            err << "error: " << e.what() << '\n';
            log["validation"] = {{"passed", false}, {"error", e.what()}};
            finish(exit_code::validation_failure, e.what());
            return res;
        }
        err << "config error: " << to_string(e.code()) << ": " << e.what() << '\n';
        finish(exit_code::config_error, e.what());
        return res;
    }
    const ProblemSpec& spec = built->spec;
    const auto& grid = spec.grid;
    log["problem"] = {{"name", spec.name},
                      {"n", spec.n()},
                      {"p", spec.cone.p()},
                      {"tuple_count", spec.cone.tuple_count()},
                      {"existence_range", spec.cone.in_existence_range()},
                      {"grid", grid.shape()},
                      {"unknowns", grid.interior().size()},
                      {"f", spec.f.description},
                      {"f_uses_z", spec.f.uses_z},
                      {"f_uses_p", spec.f.uses_p},
                      {"manufactured_beta", built->beta}};
    if (!spec.cone.in_existence_range())
        err << "warning: p < n/2 lies outside the existence range; solving anyway\n";

    // Subsolution.
    SubsolutionReport vr;
    try {
        vr = validate_subsolution(spec);
    } catch (const Error& e) {
        err << "config error: " << e.what() << '\n';
        finish(exit_code::config_error, e.what());
        return res;
    }
    log["validation"] = {{"passed", vr.passed},
                         {"min_cone_margin", vr.min_cone_margin},
                         {"min_equation_margin", vr.min_equation_margin},
                         {"max_boundary_mismatch", vr.max_boundary_mismatch},
                         {"failure_count", vr.failures.size()},
                         {"failures", issues_json(grid, vr.failures)}};
    if (!vr.passed) {
        err << "error: subsolution check failed at " << vr.failures.size() << " point(s)\n";
        for (std::size_t i = 0; i < vr.failures.size() && i < 20; ++i)
            err << "  " << describe_point(grid, vr.failures[i].index) << ": " << vr.failures[i].kind
                << " margin " << format_double(vr.failures[i].margin) << '\n';
        finish(exit_code::validation_failure, "subsolution check failed");
        return res;
    }

    // Solve.
    try {
        res.result = continuity_solve(spec, cfg.solver);
        log["solve"] = continuity_json(*res.result);
        log["solve"]["status"] = "converged";
    } catch (const HomotopyStall& e) {
        res.result = e.partial();
        log["solve"] = continuity_json(e.partial());
        log["solve"]["status"] = "stalled";
        err << "error: " << e.what() << '\n';
        run_detail::write_fields(cfg, spec, e.partial().state.u, e.partial().state.t, {}, built->u_star, log, err);
        finish(exit_code::homotopy_stall, e.what());
        return res;
    }
    const auto& state = res.result->state;
    if (built->u_star) {
        double e = 0.0;
        for (std::size_t i = 0; i < state.u.size(); ++i) e = std::max(e, std::abs(state.u[i] - (*built->u_star)[i]));
        log["solve"]["error_vs_u_star"] = e;
    }

    // Monitors.
    auto diag = run_diagnostics(spec, state.u, cfg);
    log["diagnostics"] = diag.report;
    log["diagnostics"]["passed"] = diag.passed;
    res.h = diag.h;
    for (const auto& m : diag.messages) err << "monitor: " << m << '\n';

    run_detail::write_fields(cfg, spec, state.u, state.t, diag.h, built->u_star, log, err);
    out << spec.name << ": converged, sup residual " << format_double(state.residual_sup) << ", cone margin "
        << format_double(state.cone_margin) << ", bisections " << res.result->bisections << '\n';
    if (!diag.passed) {
        finish(exit_code::monitor_failure, "monitor check failed");
        return res;
    }
    finish(exit_code::ok, "ok");
    return res;
}

/// Loads the config, applies flag overrides and runs. Config problems exit 4.
inline int run_from_file(const std::string& path, const RunOverrides& overrides, std::ostream& out,
                         std::ostream& err) {
    RunConfig cfg;
    try {
        cfg = load_config(path);
        apply_overrides(cfg, overrides);
    } catch (const Error& e) {
        err << "config error: " << e.what() << '\n';
        return exit_code::config_error;
    }
    try {
        return run(cfg, out, err).exit_code;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_code::monitor_failure;
    }
}

} // namespace pma
