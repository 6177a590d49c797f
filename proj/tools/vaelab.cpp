#include <CLI11.hpp>

#include <cstdio>
#include <exception>

#include "vaelab/runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"seq2seq text VAE laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    vaelab::cli::RunOptions opts;
    std::uint64_t seed_offset = 0;

    const char* subs[] = {"synth", "train", "diagnose", "decode", "ssl", "agreement", "report"};
    const char* descs[] = {
        "generate and serialize a synthetic corpus",
        "train the configured model grid (plus LM baselines)",
        "per-position profiles, relative improvement, memorization, argmax stats, IWAE",
        "reconstruct the test split into a TSV",
        "semi-supervised probing protocol (JSON output)",
        "agreement and memorization table for each trained model",
        "aggregate existing artifacts into summary.json",
    };
    for (int i = 0; i < 7; ++i) {
        CLI::App* sc = app.add_subcommand(subs[i], descs[i]);
        sc->add_option("--config", config_path, "experiment config file")->required();
        sc->add_option("--workers", opts.workers, "parallel grid workers");
        sc->add_option("--seed-offset", seed_offset, "shift every configured seed");
        sc->add_flag("--resume", opts.resume, "skip grid cells with existing checkpoints");
    }

    CLI11_PARSE(app, argc, argv);
    try {
        vaelab::cli::ExperimentConfig cfg = vaelab::cli::config_from_file(config_path);
        if (seed_offset) vaelab::cli::apply_seed_offset(cfg, seed_offset);
        const std::string sub = app.get_subcommands().front()->get_name();
        return vaelab::cli::run_subcommand(sub, cfg, opts);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
