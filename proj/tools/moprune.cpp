// moprune: evolve pruning masks for a transfer-learning head and analyse the
// resulting Pareto fronts.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "moprune/cli.hpp"

int main(int argc, char** argv)
{
    namespace cli = moprune::cli;

    CLI::App app{"Multi-objective evolutionary pruning of transfer-learning heads"};
    app.require_subcommand(1);

    std::string manifest;
    auto* validate = app.add_subcommand("validate", "Load every dataset in a manifest and print its shape");
    validate->add_option("manifest", manifest, "Run manifest (key=value)")->required();

    cli::RunOptions run_opt;
    std::string run_manifest, run_out;
    std::uint64_t seed = 0;
    auto* run = app.add_subcommand("run", "Execute independent evolution runs");
    run->add_option("manifest", run_manifest, "Run manifest (key=value)")->required();
    run->add_option("--runs", run_opt.runs, "Number of independent runs")->default_val(10);
    auto* seed_opt = run->add_option("--seed", seed, "Master seed");
    run->add_option("--out", run_out, "Output directory");
    run->add_option("--set", run_opt.sets, "Configuration override key=value (repeatable)");
    run->add_flag("-v,--verbose", run_opt.verbose, "Log every evaluation to stderr");

    cli::AnalyzeOptions analyze_opt;
    std::string analyze_dir;
    auto* analyze = app.add_subcommand("analyze", "Super front, objective slices and neuron frequency reports");
    analyze->add_option("run_dir", analyze_dir, "Directory written by 'run'")->required();
    analyze->add_option("--top-k", analyze_opt.top_k, "Neurons to report")->default_val(10);
    analyze->add_option("--fraction", analyze_opt.top_fraction, "Share of best solutions per objective slice")
        ->default_val(0.10);

    std::string ensemble_dir, metric = "accuracy";
    auto* ensemble = app.add_subcommand("ensemble", "Quantile-zone ensemble report");
    ensemble->add_option("run_dir", ensemble_dir, "Directory written by 'run'")->required();
    ensemble->add_option("--metric", metric, "accuracy or auroc")->default_val("accuracy");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return cli::validation_error;
    }

    if (*validate) return cli::cmd_validate(manifest, std::cout, std::cerr);
    if (*run) {
        run_opt.manifest = run_manifest;
        run_opt.out_dir = run_out;
        if (*seed_opt) run_opt.seed = seed;
        return cli::cmd_run(run_opt, std::cout, std::cerr);
    }
    if (*analyze) {
        analyze_opt.run_dir = analyze_dir;
        return cli::cmd_analyze(analyze_opt, std::cout, std::cerr);
    }
    if (*ensemble) return cli::cmd_ensemble(ensemble_dir, metric, std::cout, std::cerr);
    return cli::validation_error;
}
