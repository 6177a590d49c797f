#pragma once

#include <string>

#include "vaelab/config.hpp"

namespace vaelab::cli {

// Run-scoped paths. Every artifact of one resolved config lands under
// <out_root>/<run_id>/ with the resolved config written alongside.
struct RunPaths {
    std::string run_dir;
    std::string file(const std::string& name) const { return run_dir + "/" + name; }
};

// Resolve the run directory (honoring the VAELAB_OUT_ROOT environment
// variable), create it, and write config.resolved.
RunPaths prepare_run_dir(const ExperimentConfig& cfg);

struct RunOptions {
    int workers = 1;
    bool resume = false;
};

// Subcommands: synth, train, diagnose, decode, ssl, agreement, report.
// Returns a process exit status.
int run_subcommand(const std::string& sub, const ExperimentConfig& cfg, const RunOptions& opts);

}  // namespace vaelab::cli
