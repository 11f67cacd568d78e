// Command-line entry point: pma_solve --config run.yaml [overrides]

#include "pma/run.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

int main(int argc, char** argv) {
    CLI::App app{"Dirichlet solver for p-subset Monge-Ampere type equations"};
    std::string config;
    pma::RunOverrides o;
    int grid = 0, p = 0, steps = 0, max_newton = 0;
    double tol = 0.0;
    std::string diagnostics, fields, out_dir;
    std::uint64_t seed = 0;
    bool list_presets = false;

    app.add_option("--config", config, "YAML run configuration");
    app.add_option("--out-dir", out_dir, "Output directory (overrides output.dir)");
    app.add_option("--grid", grid, "Points per axis")->check(CLI::Range(9, 100000));
    app.add_option("--p", p, "Tuple size p")->check(CLI::PositiveNumber);
    app.add_option("--continuity-steps", steps, "Uniform homotopy steps")->check(CLI::PositiveNumber);
    app.add_option("--tol", tol, "Newton tolerance on the sup residual")->check(CLI::PositiveNumber);
    app.add_option("--max-newton", max_newton, "Newton iterations per homotopy step")->check(CLI::PositiveNumber);
    app.add_option("--diagnostics", diagnostics, "off, basic or full")
        ->check(CLI::IsMember({"off", "basic", "full"}));
    app.add_option("--seed", seed, "Seed for sampled diagnostics");
    app.add_option("--dump-fields", fields, "Comma-separated fields: u,u_sub,h,residual,margin,u_star,error");
    app.add_flag("--list-presets", list_presets, "Print the preset names and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : pma::exit_code::config_error;
    }
    if (list_presets) {
        for (const auto& n : pma::preset_names()) std::cout << n << '\n';
        return 0;
    }
    if (config.empty()) {
        std::cerr << "config error: --config is required\n";
        return pma::exit_code::config_error;
    }
    if (app.count("--grid")) o.grid = grid;
    if (app.count("--p")) o.p = p;
    if (app.count("--continuity-steps")) o.continuity_steps = steps;
    if (app.count("--tol")) o.tol = tol;
    if (app.count("--max-newton")) o.max_newton = max_newton;
    if (app.count("--diagnostics")) o.diagnostics = pma::parse_diagnostics_level(diagnostics);
    if (app.count("--seed")) o.seed = seed;
    if (app.count("--out-dir")) o.out_dir = out_dir;
    if (app.count("--dump-fields")) {
        std::vector<std::string> list;
        std::stringstream ss(fields);
        for (std::string item; std::getline(ss, item, ',');)
            if (!item.empty()) list.push_back(item);
        o.dump_fields = list;
    }
    return pma::run_from_file(config, o, std::cout, std::cerr);
}
