#include "cle/commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <mutex>
#include <thread>
#include <iostream>
#include <sstream>

#include "cle/checkpoint.hpp"
#include "cle/evalkit.hpp"
#include "cle/rng.hpp"

namespace cle {

namespace fs = std::filesystem;

int thread_budget() {
  const char* env = std::getenv("CLE_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

namespace {

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << text;
  }
  fs::rename(tmp, path);
}

struct SuiteData {
  Suite suite;
  TaskDataset base;
  std::vector<TaskDataset> upstream;  // in run order
  std::vector<int> order;             // upstream[i] is declared task order[i]
  std::vector<TaskDataset> downstream;
};

SuiteData build_suite(const RunConfig& cfg, bool with_base, bool with_upstream,
                      bool with_downstream) {
  SuiteData sd{default_suite(cfg.backbone, cfg.seed, cfg.suite), {}, {}, {}, {}};
  sd.order = order_permutation(cfg.order, static_cast<int>(sd.suite.upstream.size()));
  if (with_base) sd.base = sd.suite.factory.make_task(sd.suite.base);
  if (with_upstream) {
    for (int id : sd.order) {
      sd.upstream.push_back(sd.suite.factory.make_task(sd.suite.upstream[static_cast<size_t>(id)]));
    }
  }
  if (with_downstream) {
    for (const TaskSpec& spec : sd.suite.downstream) {
      sd.downstream.push_back(sd.suite.factory.make_task(spec));
    }
  }
  return sd;
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return (fs::path(cfg.out_dir) / name).string();
}

void write_metric_log(const MetricLog& log, const std::string& path) {
  std::ostringstream os;
  log.write(os);
  write_text_atomic(path, os.str());
}

void write_eval_report(const EvalReport& rep, const std::string& path) {
  std::ostringstream os;
  rep.write(os);
  write_text_atomic(path, os.str());
}

// run independent jobs with the CLE_THREADS budget
void run_jobs(std::vector<std::function<void()>> jobs) {
  const int budget = thread_budget();
  if (budget <= 1) {
    for (auto& job : jobs) job();
    return;
  }
  size_t next = 0;
  std::mutex mu;
  std::vector<std::thread> workers;
  for (int i = 0; i < budget; ++i) {
    workers.emplace_back([&] {
      while (true) {
        size_t mine;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= jobs.size()) return;
          mine = next++;
        }
        jobs[mine]();
      }
    });
  }
  for (auto& w : workers) w.join();
}

}  // namespace

int cmd_pretrain(const RunConfig& cfg) {
  SuiteData sd = build_suite(cfg, true, false, false);
  Backbone bb = pretrain_base(cfg.backbone, sd.base, cfg.pretrain_epochs, cfg.seed);
  const std::string path = out_path(cfg, "pretrain.ckpt");
  save_backbone_checkpoint(bb, path);
  std::cout << "pretrain: wrote " << path << " (checksum " << std::hex << bb.checksum()
            << std::dec << ")\n";
  return 0;
}

int cmd_run(const RunConfig& cfg, const std::string& checkpoint_path) {
  SuiteData sd = build_suite(cfg, false, true, false);
  SequenceState state;
  const std::string kind = checkpoint_kind(checkpoint_path);
  if (kind == "backbone") {
    state = make_initial_state(load_backbone_checkpoint(checkpoint_path), cfg.trainer);
  } else {
    state = load_sequence_checkpoint(checkpoint_path);
    state.config = cfg.trainer;
    // the checkpoint records how many metric rows existed when it was
    // written; re-attach that prefix of the log so the run stays append-only
    const long long offset = metric_row_offset(checkpoint_path);
    const std::string log_path = out_path(cfg, "metrics.tsv");
    if (offset > 0 && fs::exists(log_path)) {
      std::ifstream in(log_path);
      MetricLog prior = MetricLog::read(in);
      if (static_cast<long long>(prior.rows.size()) >= offset) {
        prior.rows.resize(static_cast<size_t>(offset));
        state.log = std::move(prior);
      }
    }
    std::cout << "run: resuming after task " << state.completed_tasks << "\n";
  }

  const int total = static_cast<int>(sd.upstream.size());
  for (int t = state.completed_tasks; t < total; ++t) {
    const TaskDataset& task = sd.upstream[static_cast<size_t>(t)];
    StageMetrics s1 = run_stage1(state, task, cfg.trainer);
    StageMetrics s2 = run_stage2(state, task, cfg.trainer);
    // Fig-style schedule: re-evaluate every earlier task under the current
    // model (extra adapters unused: their columns do not exist for task k)
    for (int k = 0; k < t; ++k) {
      state.log.add(k, "seq_eval", t,
                    "acc", evaluate_accuracy(state, k, sd.upstream[static_cast<size_t>(k)], Split::kTest));
    }
    state.log.add(t, "seq_eval", t, "acc", s2.test_acc);
    save_sequence_checkpoint(state, out_path(cfg, "task" + std::to_string(t + 1) + ".ckpt"));
    std::cout << "task " << t << " (" << task.spec.name << "): stage1 test " << s1.test_acc
              << ", post-expansion test " << s2.test_acc << "\n";
  }
  save_sequence_checkpoint(state, out_path(cfg, "sequence.ckpt"));
  write_metric_log(state.log, out_path(cfg, "metrics.tsv"));
  std::cout << "run: wrote " << out_path(cfg, "sequence.ckpt") << " and metrics.tsv\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path, const std::string& which,
             const std::string& task_selector) {
  SequenceState state = load_sequence_checkpoint(checkpoint_path);
  SuiteData sd = build_suite(cfg, false, true, true);
  const int step = state.completed_tasks;
  EvalReport rep;
  std::mutex rep_mu;
  auto add_row = [&](int task, const std::string& metric, double value) {
    std::lock_guard<std::mutex> lock(rep_mu);
    rep.add(task, step, metric, value);
  };

  auto selected = [&](int count) {
    std::vector<int> ids;
    if (task_selector == "all" || task_selector.empty()) {
      for (int i = 0; i < count; ++i) ids.push_back(i);
    } else {
      const int id = std::stoi(task_selector);
      if (id < 0 || id >= count) {
        throw std::invalid_argument("eval: task " + task_selector + " does not exist (have " +
                                    std::to_string(count) + ")");
      }
      ids.push_back(id);
    }
    return ids;
  };

  std::vector<std::function<void()>> jobs;
  if (which == "forgetting") {
    for (int k : selected(state.completed_tasks)) {
      jobs.push_back([&, k] {
        add_row(k, "forgetting",
                forgetting(state, k, sd.upstream[static_cast<size_t>(k)], cfg.trainer));
        add_row(k, "forgetting_zero",
                forgetting_zero_extension(state, k, sd.upstream[static_cast<size_t>(k)]));
      });
    }
  } else if (which == "probe") {
    for (int d : selected(static_cast<int>(sd.downstream.size()))) {
      jobs.push_back([&, d] {
        add_row(d, "linear_probe",
                linear_probe(state, sd.downstream[static_cast<size_t>(d)], cfg.eval,
                             derive_seed(cfg.seed, "probe", static_cast<uint64_t>(d))));
      });
    }
  } else if (which == "experience") {
    for (int d : selected(static_cast<int>(sd.downstream.size()))) {
      jobs.push_back([&, d] {
        ExperienceProbeResult r =
            experience_probe(state, sd.downstream[static_cast<size_t>(d)], cfg.trainer);
        add_row(d, "experience_probe", r.accuracy);
        for (size_t i = 0; i < r.mean_abs_alpha.size(); ++i) {
          add_row(d, "alpha." + std::to_string(i), r.mean_abs_alpha[i]);
        }
      });
    }
  } else if (which == "expansion") {
    for (int d : selected(static_cast<int>(sd.downstream.size()))) {
      jobs.push_back([&, d] {
        add_row(d, "expansion_probe",
                expansion_probe(state, sd.downstream[static_cast<size_t>(d)], cfg.trainer));
        add_row(d, "adapter_baseline",
                adapter_baseline(state, sd.downstream[static_cast<size_t>(d)], cfg.trainer));
      });
    }
  } else if (which == "lowshot") {
    const int n = cfg.eval.lowshot_per_class;
    for (int d : selected(static_cast<int>(sd.downstream.size()))) {
      jobs.push_back([&, d] {
        TaskDataset low = subsample_lowshot(sd.downstream[static_cast<size_t>(d)], n,
                                            derive_seed(cfg.seed, "lowshot", static_cast<uint64_t>(d)));
        const std::string tag = "_lowshot" + std::to_string(n);
        add_row(d, "linear_probe" + tag,
                linear_probe(state, low, cfg.eval, derive_seed(cfg.seed, "probe-low", static_cast<uint64_t>(d))));
        ExperienceProbeResult r = experience_probe(state, low, cfg.trainer);
        add_row(d, "experience_probe" + tag, r.accuracy);
        add_row(d, "expansion_probe" + tag, expansion_probe(state, low, cfg.trainer));
        add_row(d, "adapter_baseline" + tag, adapter_baseline(state, low, cfg.trainer));
      });
    }
  } else if (which == "bounds") {
    for (int k : selected(state.completed_tasks)) {
      jobs.push_back([&, k] {
        add_row(k, "linear_probe_bound",
                linear_probe(state, sd.upstream[static_cast<size_t>(k)], cfg.eval,
                             derive_seed(cfg.seed, "bound-probe", static_cast<uint64_t>(k))));
        add_row(k, "finetune_bound",
                finetune_bound(state, sd.upstream[static_cast<size_t>(k)], cfg.trainer));
      });
    }
  } else {
    throw std::invalid_argument(
        "eval: unknown selector '" + which +
        "'; expected forgetting|probe|experience|expansion|lowshot|bounds");
  }

  run_jobs(std::move(jobs));
  std::stable_sort(rep.rows.begin(), rep.rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a.task, a.step) < std::tie(b.task, b.step);
  });
  const std::string path = out_path(cfg, "eval_" + which + ".tsv");
  write_eval_report(rep, path);
  std::cout << "eval: wrote " << path << " (" << rep.rows.size() << " rows)\n";
  return 0;
}

int cmd_report(const RunConfig& cfg, const std::vector<std::string>& log_paths) {
  MetricLog merged;
  std::vector<std::string> paths = log_paths;
  if (paths.empty()) {
    const std::string def = out_path(cfg, "metrics.tsv");
    if (fs::exists(def)) paths.push_back(def);
  }
  for (const std::string& p : paths) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("report: cannot open log " + p);
    merged.append(MetricLog::read(in));
  }

  EvalReport evals;
  for (const auto& entry : fs::directory_iterator(cfg.out_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("eval_", 0) == 0 && name.find(".tsv") != std::string::npos) {
      std::ifstream in(entry.path());
      EvalReport r = EvalReport::read(in);
      evals.rows.insert(evals.rows.end(), r.rows.begin(), r.rows.end());
    }
  }

  // accuracy-vs-step table: one row per (task, step, metric), stably sorted
  struct AccRow {
    int task, step;
    std::string metric;
    double value;
  };
  std::vector<AccRow> acc;
  for (const MetricRow& r : merged.rows) {
    if (r.stage == "seq_eval" && r.metric == "acc") {
      acc.push_back({r.task, r.epoch, "accuracy", r.value});
    }
    if (r.stage == "stage1" && r.epoch == -1 && r.metric == "test_acc") {
      acc.push_back({r.task, r.task, "stage1_accuracy", r.value});
    }
    if (r.stage == "stage2" && r.epoch == -1 && r.metric == "test_acc") {
      acc.push_back({r.task, r.task, "post_expansion_accuracy", r.value});
    }
  }
  for (const EvalReport::Row& r : evals.rows) {
    if (r.metric == "linear_probe_bound" || r.metric == "finetune_bound") {
      acc.push_back({r.task, r.step, r.metric, r.value});
    }
  }
  std::stable_sort(acc.begin(), acc.end(), [](const AccRow& a, const AccRow& b) {
    return std::tie(a.task, a.step) < std::tie(b.task, b.step);
  });
  {
    std::ostringstream os;
    os << "task\tstep\tmetric\tvalue\n";
    char buf[64];
    for (const AccRow& r : acc) {
      std::snprintf(buf, sizeof buf, "%.17g", r.value);
      os << r.task << "\t" << r.step << "\t" << r.metric << "\t" << buf << "\n";
    }
    write_text_atomic(out_path(cfg, "report_accuracy.tsv"), os.str());
  }

  // per-adapter coefficient bar data per eval task
  {
    std::ostringstream os;
    os << "task\tadapter\tmean_abs_alpha\n";
    char buf[64];
    std::vector<EvalReport::Row> alpha_rows;
    for (const EvalReport::Row& r : evals.rows) {
      if (r.metric.rfind("alpha.", 0) == 0) alpha_rows.push_back(r);
    }
    std::stable_sort(alpha_rows.begin(), alpha_rows.end(), [](const auto& a, const auto& b) {
      return std::tie(a.task, a.metric) < std::tie(b.task, b.metric);
    });
    for (const EvalReport::Row& r : alpha_rows) {
      std::snprintf(buf, sizeof buf, "%.17g", r.value);
      os << r.task << "\t" << r.metric.substr(6) << "\t" << buf << "\n";
    }
    write_text_atomic(out_path(cfg, "report_coefficients.tsv"), os.str());
  }
  std::cout << "report: wrote " << out_path(cfg, "report_accuracy.tsv") << " and "
            << out_path(cfg, "report_coefficients.tsv") << "\n";
  return 0;
}

}  // namespace cle
