#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cle/trainer.hpp"

namespace cle {

struct ProbeConfig {
  int probe_epochs = 20;  // linear probes train the head to convergence
  double probe_lr = 3e-3;
  int lowshot_per_class = 32;
};

// Head-only training on the frozen model with no adapters active; the lower
// bound every other protocol is compared against.
double linear_probe(const SequenceState& state, const TaskDataset& task, const ProbeConfig& pc,
                    uint64_t seed);

struct ExperienceProbeResult {
  double accuracy = 0;
  std::vector<double> mean_abs_alpha;  // per adapter, on the test split
};

// Stage-1 procedure on a downstream task: fresh queries over every stored
// adapter plus a fresh head; no adapter is added.
ExperienceProbeResult experience_probe(const SequenceState& state, const TaskDataset& task,
                                       const TrainerConfig& cfg);

// Stage-1 followed by stage-2 with a throwaway adapter (discarded with the
// evaluation copy).
double expansion_probe(const SequenceState& state, const TaskDataset& task,
                       const TrainerConfig& cfg);

// Single fresh adapter trained alone on the task, ignoring the bank: the
// one-adapter-per-task baseline.
double adapter_baseline(const SequenceState& state, const TaskDataset& task,
                        const TrainerConfig& cfg);

// Retrains only task k's queries, widened over every adapter present at the
// current step (new columns start at zero), then reports
// accuracy(now) - accuracy(right after task k's expansion).
double forgetting(const SequenceState& state, int task_k, const TaskDataset& data_k,
                  const TrainerConfig& cfg);

// The widened-with-zeros, no-retraining reduction; exactly zero by
// construction because zero query columns produce zero coefficients.
double forgetting_zero_extension(const SequenceState& state, int task_k,
                                 const TaskDataset& data_k);

// Full fine-tuning of an unfrozen backbone copy: the upper-bound reference.
double finetune_bound(const SequenceState& state, const TaskDataset& task,
                      const TrainerConfig& cfg);

struct EvalReport {
  struct Row {
    int task = -1;
    int step = -1;
    std::string metric;
    double value = 0;
  };
  std::vector<Row> rows;

  void add(int task, int step, const std::string& metric, double value);
  void write(std::ostream& out) const;
  static EvalReport read(std::istream& in);
};

}  // namespace cle
