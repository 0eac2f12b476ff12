#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cle/adapters.hpp"
#include "cle/backbone.hpp"
#include "cle/knowledge.hpp"
#include "cle/metrics.hpp"
#include "cle/model.hpp"
#include "cle/optim.hpp"
#include "cle/taskgen.hpp"

namespace cle {

struct TrainerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs_stage1 = 10;
  int epochs_stage2 = 20;
  int batch_size = 32;
  double lambda = 0.01;
  FusionMode fusion = FusionMode::kAdapterLevel;
  uint64_t seed = 0;
  bool stage2_past_queries_trainable = false;
  bool stage1_keys_trainable = false;
  int bottleneck = 8;
  double query_init_stdev = 0.02;

  void validate() const;
  AdamConfig adam() const { return {lr, beta1, beta2, adam_eps}; }
};

struct StageMetrics {
  int task = -1;
  int stage = 0;
  // evaluation passes over the train split at the stage boundaries; the
  // stage-2 init value must equal the previous stage-1 final value exactly
  // (the new adapter delta is zero at init)
  double init_eval_loss = 0;
  double final_eval_loss = 0;
  double train_acc = 0, val_acc = 0, test_acc = 0;
  std::vector<double> alpha_mean;  // mean |alpha| per adapter over the last epoch
};

struct TaskSummary {
  std::string name;
  double stage1_test_acc = 0;         // experience-based accuracy, pre-expansion
  double post_expansion_test_acc = 0; // A[t][t]
  double stage1_final_eval_loss = 0;
  double stage2_init_eval_loss = 0;
};

// Everything one continual-learning run mutates. The backbone is frozen on
// entry; adapters, keys, queries and heads of completed tasks freeze at each
// task boundary.
struct SequenceState {
  Backbone backbone;
  AdapterBank bank;
  std::vector<TaskQuerySet> queries;  // per task
  std::vector<TaskHead> heads;        // per task
  TrainerConfig config;
  int completed_tasks = 0;
  std::vector<TaskSummary> summaries;
  std::vector<uint64_t> boundary_checksums;
  MetricLog log;

  // backbone plus every completed task's adapter and key, bit-exact
  uint64_t frozen_checksum() const;
  ActiveModel task_model(int task_index) const;
  SequenceState clone() const;
};

SequenceState make_initial_state(Backbone frozen_backbone, const TrainerConfig& cfg);

// Stage 1, experience-based learning: for task t > 0 trains the queries over
// the stored adapters plus the fresh head. For the first task it only sets up
// the head and query set and reports the untrained metrics.
StageMetrics run_stage1(SequenceState& state, const TaskDataset& task, const TrainerConfig& cfg);

// Stage 2, novel knowledge expansion: adds one adapter (zero delta at init)
// plus its key and query, then trains them with the head.
StageMetrics run_stage2(SequenceState& state, const TaskDataset& task, const TrainerConfig& cfg);

SequenceState run_sequence(const Backbone& backbone, const std::vector<TaskDataset>& tasks,
                           const TrainerConfig& cfg);

double evaluate_accuracy(const SequenceState& state, int task_index, const TaskDataset& data,
                         Split split);

// Shared minibatch loop; evalkit reuses it for probes.
struct TrainLoop {
  ActiveModel model;
  std::vector<Tensor> trainables;
  const TaskQuerySet* penalty_queries = nullptr;  // null: no ortho penalty
  int penalty_keys = 0;                           // key columns in the penalty stack
  double lambda = 0;
  int epochs = 0;
  int batch_size = 32;
  AdamConfig adam;
  uint64_t shuffle_seed = 0;

  // logging
  MetricLog* log = nullptr;
  int task_tag = -1;
  std::string stage_tag;
};

void run_train_loop(TrainLoop& loop, const TaskDataset& data);

// Evaluation pass over a split: mean task loss and accuracy, no updates.
struct EvalResult {
  double loss = 0;
  double accuracy = 0;
  std::vector<double> alpha_mean;
};
EvalResult evaluate(const ActiveModel& model, const TaskDataset& data, Split split,
                    int batch_size = 64);

}  // namespace cle
