#include "pma/config.hpp"
#include "pma/run.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

using namespace pma;
namespace fs = std::filesystem;

namespace {

std::string config_error_message(const std::string& text) {
    try {
        auto cfg = parse_config_string(text);
        validate_config(cfg);
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::config_error);
        return e.what();
    }
    ADD_FAILURE() << "no error for:\n" << text;
    return {};
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("pma_test_config_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

json strip_timestamps(json j) {
    j.erase("timestamps");
    return j;
}

} // namespace

TEST(Config, UnknownKeyNamesKeyAndLine) {
    const auto msg = config_error_message("problem:\n  preset: poisson2d\nsolver:\n  foo: 1\n");
    EXPECT_NE(msg.find("unknown key 'foo'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("section 'solver'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("line 4"), std::string::npos) << msg;
    const auto root = config_error_message("problem:\n  preset: poisson2d\nextra: 2\n");
    EXPECT_NE(root.find("'extra'"), std::string::npos);
    EXPECT_NE(root.find("line 3"), std::string::npos);
}

TEST(Config, MissingAndConflictingKeys) {
    EXPECT_NE(config_error_message("solver:\n  max_newton: 3\n").find("missing section 'problem'"), std::string::npos);
    EXPECT_NE(config_error_message("problem:\n  n: 2\n  p: 1\n  phi: x1\n").find("missing key 'f'"), std::string::npos);
    EXPECT_NE(config_error_message("problem:\n  p: 1\n  f: '1'\n  phi: x1\n").find("missing key 'n'"), std::string::npos);
    EXPECT_NE(config_error_message("problem:\n  preset: ma2d_mms\n  f: '2'\n").find("derived from manufactured"),
              std::string::npos);
    EXPECT_NE(config_error_message("problem:\n  preset: ma2d\n  A: ['1']\n  chi: ['1']\n").find("either 'A' or 'chi'"),
              std::string::npos);
    config_error_message("problem:\n  preset: nope\n");
    config_error_message("");
    config_error_message("problem: [1, 2\n");
}

TEST(Config, ValueChecks) {
    config_error_message("problem:\n  preset: ma2d\n  grid: 5\n");
    config_error_message("problem:\n  preset: ma2d\n  grid: [17, 17, 17]\n");
    config_error_message("problem:\n  preset: ma2d\n  p: 3\n");
    config_error_message("problem:\n  preset: ma2d\n  A: ['1', '0', '0']\n");
    config_error_message("problem:\n  preset: ma2d\nsolver:\n  linear_solver: cholesky\n");
    config_error_message("problem:\n  preset: ma2d\nsolver:\n  max_newton: many\n");
    config_error_message("problem:\n  preset: ma2d\nsolver:\n  continuity_steps: 0\n");
    config_error_message("problem:\n  preset: ma2d\ndiagnostics:\n  level: verbose\n");
    config_error_message("problem:\n  preset: ma2d\noutput:\n  fields: [u, velocity]\n");
    config_error_message("problem:\n  preset: ma2d\n  metric: euclid\n");
    config_error_message("problem:\n  preset: ma2d\n  metric:\n    type: conformal\n");
}

TEST(Config, PresetWithOverrides) {
    const auto cfg = parse_config_string(
        "problem:\n  preset: ma2d\n  grid: [17, 21]\n  name: small\n"
        "solver:\n  continuity_steps: 4\n  tol_newton: 1.0e-11\n  linear_solver: krylov\n  check_jacobian: true\n"
        "output:\n  dir: somewhere\n  fields: [u, margin]\n"
        "diagnostics:\n  level: full\n  seed: 9\n  collar: 0.2\n  samples: 50\n");
    EXPECT_EQ(cfg.problem.name, "small");
    EXPECT_EQ(cfg.problem.p, 1);
    EXPECT_EQ(cfg.problem.shape, (std::vector<int>{17, 21}));
    EXPECT_EQ(cfg.problem.f, preset("ma2d").f);
    EXPECT_EQ(cfg.solver.continuity_steps, 4);
    EXPECT_EQ(cfg.solver.tol_newton, 1e-11);
    EXPECT_EQ(cfg.solver.linear_solver, LinearSolverKind::krylov);
    EXPECT_TRUE(cfg.solver.check_jacobian);
    EXPECT_EQ(cfg.output.dir, "somewhere");
    EXPECT_EQ(cfg.output.fields, (std::vector<std::string>{"u", "margin"}));
    EXPECT_EQ(cfg.diagnostics.level, DiagnosticsLevel::full);
    EXPECT_EQ(cfg.diagnostics.seed, 9u);
    EXPECT_EQ(*cfg.diagnostics.collar, 0.2);
    EXPECT_EQ(cfg.diagnostics.samples, 50u);
    EXPECT_NO_THROW(validate_config(cfg));
}

TEST(Config, MetricKindsAndTensors) {
    const auto cfg = parse_config_string(
        "problem:\n  n: 2\n  p: 1\n  f: '1 + z'\n  phi: 'x1^2 + x2^2'\n"
        "  metric:\n    type: entries\n    entries:\n      - ['1 + x1', '0.1']\n      - ['0.1', '1']\n"
        "  chi: [['0.5', '0'], ['0', '0.5']]\n");
    EXPECT_EQ(cfg.problem.metric.kind, MetricKind::entries);
    EXPECT_EQ(cfg.problem.metric.entries.size(), 4u);
    EXPECT_EQ(cfg.problem.A.size(), 4u);
    EXPECT_EQ(cfg.problem.name, "custom");
    const auto conf = parse_config_string(
        "problem:\n  preset: poisson2d\n  metric:\n    type: conformal\n    sigma: '0.1*x2'\n");
    EXPECT_EQ(conf.problem.metric.kind, MetricKind::conformal);
    EXPECT_EQ(conf.problem.metric.sigma, "0.1*x2");
    const auto id = parse_config_string("problem:\n  preset: pma_half\n  metric: identity\n");
    EXPECT_EQ(id.problem.metric.kind, MetricKind::identity);
}

TEST(Config, ManufacturedBlock) {
    const auto cfg = parse_config_string(
        "problem:\n  n: 2\n  p: 1\n  manufactured:\n    u_star: 'x1^2 + x2^2'\n    beta: 0.25\n    rhs: discrete\n");
    ASSERT_TRUE(cfg.problem.manufactured.has_value());
    EXPECT_EQ(cfg.problem.manufactured->u_star, "x1^2 + x2^2");
    EXPECT_EQ(cfg.problem.manufactured->beta, 0.25);
    EXPECT_EQ(cfg.problem.manufactured->rhs, oracles::RhsSource::discrete);
    config_error_message("problem:\n  n: 2\n  p: 1\n  manufactured:\n    beta: 0.25\n");
    config_error_message("problem:\n  n: 2\n  p: 1\n  manufactured:\n    u_star: x1\n    rhs: exact\n");
}

TEST(Config, ShippedConfigsParse) {
    for (const auto& entry : fs::directory_iterator(fs::path(PMA_SOURCE_DIR) / "configs")) {
        if (entry.path().extension() != ".yaml") continue;
        const auto cfg = load_config(entry.path().string());
        EXPECT_NO_THROW(validate_config(cfg)) << entry.path();
    }
    try {
        load_config("/nonexistent/config.yaml");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::config_error);
    }
}

TEST(Config, OverridesApply) {
    auto cfg = parse_config_string("problem:\n  preset: pma_half\n");
    RunOverrides o;
    o.grid = 9;
    o.p = 3;
    o.continuity_steps = 2;
    o.tol = 1e-9;
    o.max_newton = 7;
    o.diagnostics = DiagnosticsLevel::off;
    o.seed = 42;
    o.dump_fields = std::vector<std::string>{"u", "h"};
    o.out_dir = "elsewhere";
    apply_overrides(cfg, o);
    EXPECT_EQ(cfg.problem.shape, (std::vector<int>{9, 9, 9, 9}));
    EXPECT_EQ(cfg.problem.p, 3);
    EXPECT_EQ(cfg.solver.continuity_steps, 2);
    EXPECT_EQ(cfg.solver.tol_newton, 1e-9);
    EXPECT_EQ(cfg.solver.max_newton, 7);
    EXPECT_EQ(cfg.diagnostics.level, DiagnosticsLevel::off);
    EXPECT_EQ(cfg.diagnostics.seed, 42u);
    EXPECT_EQ(cfg.solver.seed, 42u);
    EXPECT_EQ(cfg.output.fields.size(), 2u);
    EXPECT_EQ(cfg.output.dir, "elsewhere");
}

TEST(Csv, RoundTripIsBitExact) {
    const auto dir = fresh_dir("csv");
    const Grid grid(2, {9, 11});
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(grid.size());
    for (auto& x : v) x = u(rng) * std::pow(10.0, 40.0 * u(rng));
    v[0] = 0.1;
    v[1] = -0.0;
    v[2] = std::numeric_limits<double>::denorm_min();
    v[3] = std::numeric_limits<double>::max();
    v[4] = 1.0 / 3.0;
    write_field_csv(dir / "f.csv", grid, v);
    const auto back = read_field_csv(dir / "f.csv");
    EXPECT_EQ(back.n, 2);
    ASSERT_EQ(back.values.size(), v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        EXPECT_EQ(std::memcmp(&back.values[i], &v[i], sizeof(double)), 0) << i;
        EXPECT_EQ(back.points[i][0], grid.coord(i, 0));
        EXPECT_EQ(back.points[i][1], grid.coord(i, 1));
    }
    std::ifstream in(dir / "f.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "x1,x2,value");
}

TEST(RunLog, ReproducibleModuloTimestamps) {
    const auto dir = fresh_dir("repro");
    auto cfg = parse_config_string("problem:\n  preset: ma2d\n  grid: 17\ndiagnostics:\n  level: full\n  samples: 100\n");
    cfg.output.dir = dir.string();
    cfg.output.fields = {"u", "h", "residual", "margin"};
    std::ostringstream out, err;
    const auto a = run(cfg, out, err);
    ASSERT_EQ(a.exit_code, exit_code::ok) << err.str();
    std::ifstream f1(dir / "u.csv");
    const std::string u1((std::istreambuf_iterator<char>(f1)), {});
    const auto b = run(cfg, out, err);
    std::ifstream f2(dir / "u.csv");
    const std::string u2((std::istreambuf_iterator<char>(f2)), {});
    EXPECT_EQ(strip_timestamps(a.log).dump(), strip_timestamps(b.log).dump());
    EXPECT_EQ(u1, u2);
    EXPECT_TRUE(a.log.contains("timestamps"));
    EXPECT_TRUE(fs::exists(dir / "run_log.json"));
    EXPECT_TRUE(fs::exists(dir / "margin.csv"));
    EXPECT_EQ(a.log["solve"]["status"], "converged");
    EXPECT_TRUE(a.log["diagnostics"]["passed"].get<bool>());
}

TEST(RunLog, ValidationFailuresExitTwo) {
    const auto dir = fresh_dir("validation");
    std::ostringstream out, err;
    auto saddle = parse_config_string("problem:\n  n: 2\n  p: 1\n  grid: 9\n  manufactured:\n    u_star: 'x1^2 - x2^2'\n");
    saddle.output.dir = dir.string();
    EXPECT_EQ(run(saddle, out, err).exit_code, exit_code::validation_failure);
    auto metric = parse_config_string(
        "problem:\n  preset: poisson2d\n  grid: 9\n  metric:\n    type: entries\n    entries: ['1', '2', '2', '1']\n");
    metric.output.dir = dir.string();
    EXPECT_EQ(run(metric, out, err).exit_code, exit_code::validation_failure);
    auto sub = parse_config_string("problem:\n  preset: ma2d\n  grid: 9\n  subsolution: 'x1^2 - x2^2'\n");
    sub.output.dir = dir.string();
    const auto r = run(sub, out, err);
    EXPECT_EQ(r.exit_code, exit_code::validation_failure);
    EXPECT_FALSE(r.log["validation"]["passed"].get<bool>());
    EXPECT_GT(r.log["validation"]["failure_count"].get<int>(), 0);
}
