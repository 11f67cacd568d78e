#pragma once

// YAML run configuration with strict key checking. Sections: problem,
// solver, output, diagnostics. A problem may start from a preset and
// override individual keys.

#include "pma/error.hpp"
#include "pma/presets.hpp"
#include "pma/solver.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace pma {

enum class DiagnosticsLevel { off, basic, full };

inline const char* to_string(DiagnosticsLevel d) {
    switch (d) {
    case DiagnosticsLevel::off: return "off";
    case DiagnosticsLevel::basic: return "basic";
    case DiagnosticsLevel::full: return "full";
    }
    return "?";
}

inline DiagnosticsLevel parse_diagnostics_level(const std::string& s) {
    if (s == "off") return DiagnosticsLevel::off;
    if (s == "basic") return DiagnosticsLevel::basic;
    if (s == "full") return DiagnosticsLevel::full;
    throw Error(ErrorCode::config_error, "diagnostics level must be off, basic or full, got '" + s + "'");
}

inline const char* to_string(LinearSolverKind k) {
    switch (k) {
    case LinearSolverKind::automatic: return "auto";
    case LinearSolverKind::direct: return "direct";
    case LinearSolverKind::krylov: return "krylov";
    }
    return "?";
}

inline const std::vector<std::string>& known_fields() {
    static const std::vector<std::string> names{"u", "u_sub", "h", "residual", "margin", "u_star", "error"};
    return names;
}

struct OutputConfig {
    std::string dir = "out";
    std::vector<std::string> fields{"u"};
};

struct DiagnosticsConfig {
    DiagnosticsLevel level = DiagnosticsLevel::basic;
    std::uint64_t seed = 0;
    double tol_c0 = 1e-8;
    std::optional<double> collar; // default: four grid spacings
    std::size_t samples = 1000;   // f_z and structure samples in full mode
};

struct RunConfig {
    std::string source; // file path or "<string>"
    ProblemDef problem;
    SolverSettings solver;
    OutputConfig output;
    DiagnosticsConfig diagnostics;
};

namespace config_detail {

inline std::string where(const YAML::Node& node) {
    const auto m = node.Mark();
    if (m.line < 0) return "";
    return " (line " + std::to_string(m.line + 1) + ")";
}

[[noreturn]] inline void fail(const YAML::Node& node, const std::string& msg) {
    throw Error(ErrorCode::config_error, msg + where(node));
}

inline void check_keys(const YAML::Node& map, const std::string& section, std::initializer_list<const char*> allowed) {
    if (!map.IsMap()) fail(map, "section '" + section + "' must be a mapping");
    for (const auto& kv : map) {
        const auto key = kv.first.as<std::string>();
        const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
        if (!ok) fail(kv.first, "unknown key '" + key + "' in section '" + section + "'");
    }
}

template <class T>
T scalar(const YAML::Node& node, const std::string& name) {
    if (!node.IsScalar()) fail(node, "'" + name + "' must be a scalar");
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        fail(node, "'" + name + "' has an invalid value '" + node.Scalar() + "'");
    }
}

inline std::vector<std::string> string_list(const YAML::Node& node, const std::string& name) {
    std::vector<std::string> out;
    if (node.IsScalar()) {
        out.push_back(node.Scalar());
        return out;
    }
    if (!node.IsSequence()) fail(node, "'" + name + "' must be a list");
    for (const auto& item : node) {
        if (item.IsSequence())
            for (const auto& inner : item) out.push_back(scalar<std::string>(inner, name));
        else
            out.push_back(scalar<std::string>(item, name));
    }
    return out;
}

inline void read_metric(const YAML::Node& node, MetricDef& m) {
    if (node.IsScalar()) {
        const auto kind = node.Scalar();
        if (kind != "identity") fail(node, "metric shorthand must be 'identity'");
        m = MetricDef{};
        return;
    }
    check_keys(node, "problem.metric", {"type", "sigma", "entries"});
    if (!node["type"]) fail(node, "missing key 'type' in section 'problem.metric'");
    const auto type = scalar<std::string>(node["type"], "metric.type");
    if (type == "identity") {
        m = MetricDef{};
    } else if (type == "conformal") {
        m.kind = MetricKind::conformal;
        if (!node["sigma"]) fail(node, "conformal metric needs 'sigma'");
        m.sigma = scalar<std::string>(node["sigma"], "metric.sigma");
    } else if (type == "entries") {
        m.kind = MetricKind::entries;
        if (!node["entries"]) fail(node, "metric type 'entries' needs 'entries'");
        m.entries = string_list(node["entries"], "metric.entries");
    } else {
        fail(node["type"], "metric type must be identity, conformal or entries");
    }
}

inline void read_problem(const YAML::Node& node, ProblemDef& def) {
    check_keys(node, "problem",
               {"preset", "name", "n", "p", "grid", "metric", "A", "chi", "f", "phi", "subsolution",
                "subsolution_tol", "manufactured"});
    if (node["preset"]) def = preset(scalar<std::string>(node["preset"], "preset"));
    else {
        for (const char* k : {"n", "p"})
            if (!node[k]) fail(node, std::string("missing key '") + k + "' in section 'problem'");
        def.name = "custom";
    }
    if (node["name"]) def.name = scalar<std::string>(node["name"], "name");
    if (node["n"]) def.n = scalar<int>(node["n"], "n");
    if (node["p"]) def.p = scalar<int>(node["p"], "p");
    if (node["grid"]) {
        const auto g = node["grid"];
        def.shape.clear();
        if (g.IsScalar()) def.shape.assign(static_cast<std::size_t>(def.n), scalar<int>(g, "grid"));
        else if (g.IsSequence())
            for (const auto& v : g) def.shape.push_back(scalar<int>(v, "grid"));
        else fail(g, "'grid' must be an integer or a list");
    }
    if (node["metric"]) read_metric(node["metric"], def.metric);
    if (node["A"] && node["chi"]) fail(node["chi"], "give either 'A' or 'chi', not both");
    if (node["A"]) def.A = string_list(node["A"], "A");
    if (node["chi"]) def.A = string_list(node["chi"], "chi");
    if (node["f"]) def.f = scalar<std::string>(node["f"], "f");
    if (node["phi"]) def.phi = scalar<std::string>(node["phi"], "phi");
    if (node["subsolution"]) def.subsolution = scalar<std::string>(node["subsolution"], "subsolution");
    if (node["subsolution_tol"]) def.subsolution_tol = scalar<double>(node["subsolution_tol"], "subsolution_tol");
    if (node["manufactured"]) {
        const auto m = node["manufactured"];
        check_keys(m, "problem.manufactured", {"u_star", "beta", "rhs"});
        ManufacturedDef md = def.manufactured.value_or(ManufacturedDef{});
        if (m["u_star"]) md.u_star = scalar<std::string>(m["u_star"], "u_star");
        if (md.u_star.empty()) fail(m, "missing key 'u_star' in section 'problem.manufactured'");
        if (m["beta"]) md.beta = scalar<double>(m["beta"], "beta");
        if (m["rhs"]) {
            const auto r = scalar<std::string>(m["rhs"], "rhs");
            if (r == "continuum") md.rhs = oracles::RhsSource::continuum;
            else if (r == "discrete") md.rhs = oracles::RhsSource::discrete;
            else fail(m["rhs"], "manufactured.rhs must be continuum or discrete");
        }
        def.manufactured = md;
    }
    if (def.manufactured && (node["f"] || node["phi"] || node["subsolution"]))
        fail(node, "f, phi and subsolution are derived from manufactured.u_star and cannot be set");
    if (!def.manufactured) {
        if (def.f.empty()) fail(node, "missing key 'f' in section 'problem'");
        if (def.phi.empty()) fail(node, "missing key 'phi' in section 'problem'");
    }
}

inline void read_solver(const YAML::Node& node, SolverSettings& s) {
    check_keys(node, "solver",
               {"continuity_steps", "tol_newton", "max_newton", "max_bisections", "linear_solver", "krylov_tol",
                "krylov_max_iter", "check_jacobian"});
    if (node["continuity_steps"]) s.continuity_steps = scalar<int>(node["continuity_steps"], "continuity_steps");
    if (node["tol_newton"]) s.tol_newton = scalar<double>(node["tol_newton"], "tol_newton");
    if (node["max_newton"]) s.max_newton = scalar<int>(node["max_newton"], "max_newton");
    if (node["max_bisections"]) s.max_bisections = scalar<int>(node["max_bisections"], "max_bisections");
    if (node["linear_solver"]) {
        const auto k = scalar<std::string>(node["linear_solver"], "linear_solver");
        if (k == "auto") s.linear_solver = LinearSolverKind::automatic;
        else if (k == "direct") s.linear_solver = LinearSolverKind::direct;
        else if (k == "krylov") s.linear_solver = LinearSolverKind::krylov;
        else fail(node["linear_solver"], "linear_solver must be auto, direct or krylov");
    }
    if (node["krylov_tol"]) s.krylov_tol = scalar<double>(node["krylov_tol"], "krylov_tol");
    if (node["krylov_max_iter"]) s.krylov_max_iter = scalar<int>(node["krylov_max_iter"], "krylov_max_iter");
    if (node["check_jacobian"]) s.check_jacobian = scalar<bool>(node["check_jacobian"], "check_jacobian");
}

inline void read_output(const YAML::Node& node, OutputConfig& o) {
    check_keys(node, "output", {"dir", "fields"});
    if (node["dir"]) o.dir = scalar<std::string>(node["dir"], "dir");
    if (node["fields"]) o.fields = string_list(node["fields"], "fields");
}

inline void read_diagnostics(const YAML::Node& node, DiagnosticsConfig& d) {
    check_keys(node, "diagnostics", {"level", "seed", "tol_c0", "collar", "samples"});
    if (node["level"]) d.level = parse_diagnostics_level(scalar<std::string>(node["level"], "level"));
    if (node["seed"]) d.seed = scalar<std::uint64_t>(node["seed"], "seed");
    if (node["tol_c0"]) d.tol_c0 = scalar<double>(node["tol_c0"], "tol_c0");
    if (node["collar"]) d.collar = scalar<double>(node["collar"], "collar");
    if (node["samples"]) d.samples = scalar<std::size_t>(node["samples"], "samples");
}

} // namespace config_detail

/// Checks cross-field constraints after overrides are applied.
inline void validate_config(const RunConfig& cfg) {
    const auto& d = cfg.problem;
    if (d.n < 2) throw Error(ErrorCode::config_error, "problem.n must be at least 2");
    if (d.p < 1 || d.p > d.n) throw Error(ErrorCode::config_error, "problem.p must lie in [1, n]");
    if (!d.shape.empty() && static_cast<int>(d.shape.size()) != d.n)
        throw Error(ErrorCode::config_error, "problem.grid must list n entries");
    for (int s : resolved_shape(d))
        if (s < 9) throw Error(ErrorCode::config_error, "grid needs at least 9 points per axis");
    if (!d.A.empty() && static_cast<int>(d.A.size()) != d.n * d.n)
        throw Error(ErrorCode::config_error, "problem.A must have n*n entries");
    if (cfg.solver.continuity_steps < 1) throw Error(ErrorCode::config_error, "continuity_steps must be positive");
    if (!(cfg.solver.tol_newton > 0.0)) throw Error(ErrorCode::config_error, "tol_newton must be positive");
    if (cfg.solver.max_newton < 1) throw Error(ErrorCode::config_error, "max_newton must be positive");
    for (const auto& f : cfg.output.fields)
        if (std::find(known_fields().begin(), known_fields().end(), f) == known_fields().end())
            throw Error(ErrorCode::config_error, "unknown output field '" + f + "'");
}

inline RunConfig parse_config_node(const YAML::Node& root, const std::string& source) {
    using namespace config_detail;
    RunConfig cfg;
    cfg.source = source;
    if (!root || root.IsNull()) throw Error(ErrorCode::config_error, "empty config");
    check_keys(root, "<root>", {"problem", "solver", "output", "diagnostics"});
    if (!root["problem"]) throw Error(ErrorCode::config_error, "missing section 'problem'");
    read_problem(root["problem"], cfg.problem);
    if (root["solver"]) read_solver(root["solver"], cfg.solver);
    if (root["output"]) read_output(root["output"], cfg.output);
    if (root["diagnostics"]) read_diagnostics(root["diagnostics"], cfg.diagnostics);
    return cfg;
}

inline RunConfig parse_config_string(const std::string& text) {
    try {
        return parse_config_node(YAML::Load(text), "<string>");
    } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::config_error, std::string("YAML: ") + e.what());
    }
}

inline RunConfig load_config(const std::string& path) {
    try {
        return parse_config_node(YAML::LoadFile(path), path);
    } catch (const YAML::BadFile&) {
        throw Error(ErrorCode::config_error, "cannot read config file '" + path + "'");
    } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::config_error, std::string("YAML: ") + e.what());
    }
}

} // namespace pma
