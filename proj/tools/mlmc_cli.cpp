#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "mlmc/experiments.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    int threads = 0;
    std::string out;
};

void add_common(CLI::App* sub, CommonOpts& o)
{
    sub->add_option("--config", o.config_path, "JSON config file")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "override the base seed");
    sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", o.out, "override the output directory");
}

void print_brief(const mlmc::json& summary)
{
    const auto& res = summary.at("result");
    const std::string experiment = summary.at("experiment").get<std::string>();
    if (experiment == "mlmc") {
        std::cout << "estimate = " << res.at("estimate").get<double>()
                  << "  (eps = " << res.at("epsilon").get<double>()
                  << ", mse bound = " << res.at("mse_bound").get<double>() << ")\n";
        std::cout << "level   m          N     mean_Y        var_Y\n";
        for (const auto& lvl : res.at("levels"))
            std::printf("%5d %4lld %10lld  %12.5e %12.5e\n", lvl.at("level").get<int>(),
                        static_cast<long long>(lvl.at("m").get<std::int64_t>()),
                        static_cast<long long>(lvl.at("n").get<std::int64_t>()),
                        lvl.at("mean_y").get<double>(), lvl.at("var_y").get<double>());
        if (res.contains("mc"))
            std::cout << "mc comparison: estimate = " << res.at("mc").at("estimate").get<double>()
                      << ", n = " << res.at("mc").at("n").get<std::int64_t>()
                      << ", work = " << res.at("mc").at("total_work").get<double>() << "\n";
        if (res.at("level_budget_exhausted").get<bool>())
            std::cout << "warning: level budget exhausted before meeting the bias target\n";
    } else if (experiment == "convergence") {
        std::cout << "fitted alpha = " << res.at("alpha").dump()
                  << "  (constant " << res.at("c_alpha").dump() << ")\n";
        std::cout << "fitted beta  = " << res.at("beta").dump() << "  (constant "
                  << res.at("c_beta").dump() << ")\n";
    } else if (experiment == "cgv-compare") {
        std::cout << "level   m    var_std      var_cgv      reduction\n";
        for (const auto& lvl : res.at("levels"))
            std::printf("%5d %4lld  %11.4e %11.4e  %s\n", lvl.at("level").get<int>(),
                        static_cast<long long>(lvl.at("m").get<std::int64_t>()),
                        lvl.at("var_y_std").get<double>(), lvl.at("var_y_cgv").get<double>(),
                        lvl.at("reduction").is_null()
                            ? "n/a"
                            : std::to_string(lvl.at("reduction").get<double>()).c_str());
    } else if (experiment == "solver-bench") {
        std::cout << "   m        dof   mean_iters  seconds/dof\n";
        for (const auto& row : res.at("rows"))
            std::printf("%4lld %10lld   %8.2f   %10.3e\n",
                        static_cast<long long>(row.at("m").get<std::int64_t>()),
                        static_cast<long long>(row.at("dof").get<std::int64_t>()),
                        row.at("mean_iterations").get<double>(),
                        row.at("seconds_per_dof").get<double>());
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Multilevel Monte Carlo estimation for steady Darcy flow with random "
                 "permeability (finite volumes, geometric multigrid, coarse grid variates)"};
    app.require_subcommand(1);

    CommonOpts opts;
    auto* sub_mlmc = app.add_subcommand("mlmc", "adaptive MLMC (or CGV-MLMC / MC) run");
    auto* sub_conv =
        app.add_subcommand("convergence", "reference-grid error and variance decay study");
    auto* sub_cgv =
        app.add_subcommand("cgv-compare", "variance of Y_l with and without coarse grid variates");
    auto* sub_bench = app.add_subcommand("solver-bench", "solve time versus degrees of freedom");
    for (auto* sub : {sub_mlmc, sub_conv, sub_cgv, sub_bench})
        add_common(sub, opts);

    CLI11_PARSE(app, argc, argv);

    try {
        mlmc::ExperimentConfig config = mlmc::load_config_file(opts.config_path);
        CLI::App* chosen = app.get_subcommands().front();
        config.experiment = chosen->get_name();
        if (chosen->count("--seed") > 0)
            config.seed = opts.seed;
        if (chosen->count("--threads") > 0)
            config.threads = opts.threads;
        if (chosen->count("--out") > 0)
            config.output_dir = opts.out;
        // re-validate with the chosen experiment and overrides applied
        config = mlmc::config_from_json(mlmc::config_to_json(config));

        const mlmc::json summary = mlmc::run_and_write(config);
        print_brief(summary);
        std::cout << "wrote " << config.output_dir << "/levels.csv and summary.json\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
