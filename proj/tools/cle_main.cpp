#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "cle/commands.hpp"

using namespace cle;

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"cle: desk-scale continual learning with weighted adapter banks"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, out_dir, order, fusion, which = "probe",
              task_selector = "all";
  double lambda = -1;
  long long seed = -1;
  std::vector<std::string> logs;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file");
    cmd->add_option("--seed", seed, "override the run seed");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--order", order, "upstream order: multi-first, uni-first or custom:<ids>");
    cmd->add_option("--fusion", fusion, "coefficient fusion: adapter or token");
    cmd->add_option("--lambda", lambda, "orthogonality penalty weight");
  };

  CLI::App* pre = app.add_subcommand("pretrain", "train and freeze the base model");
  add_common(pre);
  CLI::App* run = app.add_subcommand("run", "run the upstream task sequence");
  add_common(run);
  run->add_option("--checkpoint", checkpoint_path, "pretrain or mid-sequence checkpoint")
      ->required();
  CLI::App* ev = app.add_subcommand("eval", "evaluation protocols on a sequence checkpoint");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint_path, "sequence checkpoint")->required();
  ev->add_option("--which", which,
                 "forgetting | probe | experience | expansion | lowshot | bounds");
  ev->add_option("--task", task_selector, "task index or 'all'");
  CLI::App* rep = app.add_subcommand("report", "summary tables from metric logs");
  add_common(rep);
  rep->add_option("--log", logs, "metric log files (default: <out>/metrics.tsv)");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      cfg = parse_run_config_file(config_path);
    }
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!order.empty()) cfg.order = order;
    if (!fusion.empty()) {
      if (fusion == "adapter") {
        cfg.trainer.fusion = FusionMode::kAdapterLevel;
      } else if (fusion == "token") {
        cfg.trainer.fusion = FusionMode::kTokenLevel;
      } else {
        throw std::invalid_argument("--fusion must be adapter or token");
      }
    }
    if (lambda >= 0) cfg.trainer.lambda = lambda;
    cfg.finalize();

    if (pre->parsed()) return cmd_pretrain(cfg);
    if (run->parsed()) return cmd_run(cfg, checkpoint_path);
    if (ev->parsed()) return cmd_eval(cfg, checkpoint_path, which, task_selector);
    if (rep->parsed()) return cmd_report(cfg, logs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
