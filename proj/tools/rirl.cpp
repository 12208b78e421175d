// Command-line front end: config validation, the three studies, plots and
// the aggregate report. Exit codes: 0 clean run, 1 bad usage or
// configuration, 2 partial failure (some cells errored, or the run died
// after writing a partial results file).

#include "rirl/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

struct Loaded {
    rirl::ParsedConfig raw;
    rirl::World world;
    rirl::ExperimentConfig exp;
};

Loaded load(const std::string& path, const std::string& seed_override) {
    rirl::ParsedConfig raw = rirl::load_config_file(path);
    rirl::apply_env_overrides(raw);
    if (!seed_override.empty()) raw.values["seeds"] = seed_override;
    rirl::WorldConfig wc = rirl::world_config_from(raw);
    Loaded l{std::move(raw), rirl::build_world(wc), {}};
    l.exp = rirl::experiment_config_from(l.raw, wc);
    return l;
}

void print_summary(const Loaded& l) {
    const rirl::World& w = l.world;
    std::printf("domain            %s\n", rirl::domain_name(w.cfg.domain));
    std::printf("grid              %dx%d, %zu lane cells\n", w.cols, w.rows,
                w.mdp.states.size() / w.headings.size());
    std::printf("states x actions  %d x %d, horizon %d\n", w.mdp.num_states(), w.mdp.num_actions,
                w.mdp.horizon);
    std::printf("sensor            %s%s\n", rirl::sensor_kind_name(w.cfg.sensor),
                w.has_vision ? "" : " (domain records no sightings)");
    double lg = rirl::log10_assignment_bound(w.mdp);
    bool exact = lg <= std::log10(l.exp.em.enumeration_cap);
    std::printf("assignment bound  10^%.1f -> %s inference\n", lg, exact ? "exact" : "sampled");
    std::printf("seeds             %zu, episodes %d, noise levels %zu\n", l.exp.seeds.size(),
                l.exp.episodes, l.exp.noise_levels.size());
    std::printf("config hash       %016llx\n",
                static_cast<unsigned long long>(rirl::config_hash(l.raw)));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"reward learning from indirect observations"};
    app.require_subcommand(1);

    std::string config, out_csv = "results/results.csv", in_csv, out_dir = "plots", seeds;
    int workers = 1;

    auto add_run_opts = [&](CLI::App* cmd) {
        cmd->add_option("--config", config, "world + experiment file")->required();
        cmd->add_option("--out", out_csv, "results CSV (appended, resumable)");
        cmd->add_option("--workers", workers, "parallel tasks")->check(CLI::Range(1, 64));
        cmd->add_option("--seed-range,--seeds", seeds,
                        "override the config's seed list, e.g. 0..9");
    };

    CLI::App* validate = app.add_subcommand("validate-config", "parse, build and summarize");
    validate->add_option("--config", config, "world + experiment file")->required();

    add_run_opts(app.add_subcommand("sweep", "score vs recording noise"));
    add_run_opts(app.add_subcommand("attack", "infiltration success rates"));
    add_run_opts(app.add_subcommand("convergence", "score and cost vs the sampler tolerance"));

    CLI::App* plot = app.add_subcommand("plot", "render SVG charts from a results file");
    plot->add_option("--in", in_csv, "results CSV")->required();
    plot->add_option("--out-dir", out_dir, "output directory");

    CLI::App* report = app.add_subcommand("report", "aggregate statistics from a results file");
    report->add_option("--in", in_csv, "results CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1; // --help exits clean; bad usage is a validation error
    }

    int failed_cells = 0;
    try {
        rirl::RunOptions run{out_csv, workers};
        if (app.got_subcommand("validate-config")) {
            print_summary(load(config, ""));
        } else if (app.got_subcommand("sweep")) {
            Loaded l = load(config, seeds);
            failed_cells = rirl::run_noise_sweep(l.world, l.exp, l.raw, run, std::cout);
        } else if (app.got_subcommand("attack")) {
            Loaded l = load(config, seeds);
            failed_cells = rirl::run_success_rate(l.world, l.exp, l.raw, run, std::cout);
        } else if (app.got_subcommand("convergence")) {
            Loaded l = load(config, seeds);
            failed_cells = rirl::run_convergence_study(l.world, l.exp, l.raw, run, std::cout);
        } else if (app.got_subcommand("plot")) {
            rirl::emit_plots(in_csv, out_dir, std::cout);
        } else if (app.got_subcommand("report")) {
            if (in_csv.empty()) in_csv = out_csv;
            auto rows = rirl::read_results_csv(in_csv, 0);
            rirl::write_report(rows, std::cout);
        }
    } catch (const rirl::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const rirl::ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2; // anything already written remains valid; the run is incomplete
    }
    if (failed_cells > 0) {
        std::fprintf(stderr, "%d cell(s) failed; their rows carry outcome=error\n", failed_cells);
        return 2;
    }
    return 0;
}
