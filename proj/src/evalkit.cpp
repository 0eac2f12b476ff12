#include "cle/evalkit.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "cle/rng.hpp"

namespace cle {

double linear_probe(const SequenceState& state, const TaskDataset& task, const ProbeConfig& pc,
                    uint64_t seed) {
  TaskHead head = TaskHead::init(state.backbone.cfg.model_dim, task.spec.classes,
                                 derive_seed(seed, "probe-head"));
  ActiveModel model;
  model.backbone = &state.backbone;
  model.head = &head;
  model.mode = state.config.fusion;

  TrainLoop loop;
  loop.model = model;
  loop.trainables = head.parameters();
  loop.epochs = pc.probe_epochs;
  loop.batch_size = state.config.batch_size;
  loop.adam = {pc.probe_lr, state.config.beta1, state.config.beta2, state.config.adam_eps};
  loop.shuffle_seed = derive_seed(seed, "probe-shuffle");
  run_train_loop(loop, task);
  return evaluate(model, task, Split::kTest).accuracy;
}

ExperienceProbeResult experience_probe(const SequenceState& state, const TaskDataset& task,
                                       const TrainerConfig& cfg) {
  if (state.bank.size() == 0) {
    throw std::invalid_argument("experience_probe: the adapter bank is empty");
  }
  SequenceState copy = state.clone();
  copy.config = cfg;
  run_stage1(copy, task, cfg);
  const int t = copy.completed_tasks;  // probe task index within the copy
  EvalResult ev = evaluate(copy.task_model(t), task, Split::kTest);
  return {ev.accuracy, ev.alpha_mean};
}

double expansion_probe(const SequenceState& state, const TaskDataset& task,
                       const TrainerConfig& cfg) {
  SequenceState copy = state.clone();
  copy.config = cfg;
  run_stage1(copy, task, cfg);
  StageMetrics m = run_stage2(copy, task, cfg);
  return m.test_acc;
}

double adapter_baseline(const SequenceState& state, const TaskDataset& task,
                        const TrainerConfig& cfg) {
  SequenceState lone = make_initial_state(state.backbone.clone(), cfg);
  run_stage1(lone, task, cfg);
  StageMetrics m = run_stage2(lone, task, cfg);
  return m.test_acc;
}

static void widen_queries_with_zeros(SequenceState& state, int task_k) {
  TaskQuerySet& qs = state.queries[static_cast<size_t>(task_k)];
  const int points = state.backbone.cfg.insertion_points();
  while (qs.width() < state.bank.size()) {
    qs.add_column(points, state.backbone.cfg.model_dim, 0.0, state.config.seed);
  }
}

double forgetting(const SequenceState& state, int task_k, const TaskDataset& data_k,
                  const TrainerConfig& cfg) {
  if (task_k < 0 || task_k >= state.completed_tasks) {
    throw std::invalid_argument("forgetting: task " + std::to_string(task_k) +
                                " has not completed yet");
  }
  const double reference = state.summaries[static_cast<size_t>(task_k)].post_expansion_test_acc;
  SequenceState copy = state.clone();
  widen_queries_with_zeros(copy, task_k);
  TaskQuerySet& qs = copy.queries[static_cast<size_t>(task_k)];
  for (QueryColumn& c : qs.columns) c.set_trainable(true);

  TrainLoop loop;
  loop.model = copy.task_model(task_k);
  loop.trainables = qs.all_parameters();
  loop.penalty_queries = &qs;
  loop.penalty_keys = copy.bank.size();
  loop.lambda = cfg.lambda;
  loop.epochs = cfg.epochs_stage1;
  loop.batch_size = cfg.batch_size;
  loop.adam = cfg.adam();
  loop.shuffle_seed = derive_seed(cfg.seed, "forgetting", static_cast<uint64_t>(task_k));
  run_train_loop(loop, data_k);

  const double now = evaluate(loop.model, data_k, Split::kTest).accuracy;
  return now - reference;
}

double forgetting_zero_extension(const SequenceState& state, int task_k,
                                 const TaskDataset& data_k) {
  if (task_k < 0 || task_k >= state.completed_tasks) {
    throw std::invalid_argument("forgetting: task " + std::to_string(task_k) +
                                " has not completed yet");
  }
  const double reference = state.summaries[static_cast<size_t>(task_k)].post_expansion_test_acc;
  SequenceState copy = state.clone();
  widen_queries_with_zeros(copy, task_k);
  const double now = evaluate(copy.task_model(task_k), data_k, Split::kTest).accuracy;
  return now - reference;
}

double finetune_bound(const SequenceState& state, const TaskDataset& task,
                      const TrainerConfig& cfg) {
  Backbone bb = state.backbone.clone();
  bb.set_frozen(false);
  TaskHead head = TaskHead::init(bb.cfg.model_dim, task.spec.classes,
                                 derive_seed(cfg.seed, "finetune-head"));
  ActiveModel model;
  model.backbone = &bb;
  model.head = &head;
  model.mode = cfg.fusion;

  TrainLoop loop;
  loop.model = model;
  loop.trainables = bb.parameters();
  for (Tensor& p : head.parameters()) loop.trainables.push_back(p);
  loop.epochs = cfg.epochs_stage2;
  loop.batch_size = cfg.batch_size;
  loop.adam = cfg.adam();
  loop.shuffle_seed = derive_seed(cfg.seed, "finetune-shuffle");
  run_train_loop(loop, task);
  return evaluate(model, task, Split::kTest).accuracy;
}

void EvalReport::add(int task, int step, const std::string& metric, double value) {
  rows.push_back({task, step, metric, value});
}

void EvalReport::write(std::ostream& out) const {
  for (const Row& r : rows) {
    char value[64];
    std::snprintf(value, sizeof value, "%.17g", r.value);
    out << r.task << "\t" << r.step << "\t" << r.metric << "\t" << value << "\n";
  }
}

EvalReport EvalReport::read(std::istream& in) {
  EvalReport rep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    Row r;
    std::string value;
    if (!(is >> r.task >> r.step >> r.metric >> value)) {
      throw std::runtime_error("eval report: malformed row: " + line);
    }
    r.value = std::stod(value);
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

}  // namespace cle
