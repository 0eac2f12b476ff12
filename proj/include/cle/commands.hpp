#pragma once

#include <string>
#include <vector>

#include "cle/config.hpp"

namespace cle {

// Subcommand bodies; the CLI binary parses flags and dispatches here. All
// emit status lines on stdout and write outputs under cfg.out_dir atomically.

int cmd_pretrain(const RunConfig& cfg);
int cmd_run(const RunConfig& cfg, const std::string& checkpoint_path);
int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path, const std::string& which,
             const std::string& task_selector);
int cmd_report(const RunConfig& cfg, const std::vector<std::string>& log_paths);

// Thread budget for independent evaluation jobs (CLE_THREADS, default 1).
int thread_budget();

}  // namespace cle
