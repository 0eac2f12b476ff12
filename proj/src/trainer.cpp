#include "cle/trainer.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cle/rng.hpp"

namespace cle {

void TrainerConfig::validate() const {
  if (lr <= 0 || lambda < 0 || epochs_stage1 <= 0 || epochs_stage2 < 0 || batch_size <= 0 ||
      bottleneck <= 0) {
    throw std::invalid_argument("trainer config: counts must be positive, lr > 0, lambda >= 0");
  }
}

uint64_t SequenceState::frozen_checksum() const {
  std::vector<Tensor> ps = backbone.parameters();
  for (int i = 0; i < completed_tasks && i < bank.size(); ++i) {
    for (const Tensor& t : bank.adapters[static_cast<size_t>(i)].parameters()) ps.push_back(t);
    for (const Tensor& t : bank.keys[static_cast<size_t>(i)].per_point) ps.push_back(t);
  }
  return params_checksum(ps);
}

ActiveModel SequenceState::task_model(int task_index) const {
  if (task_index < 0 || task_index >= static_cast<int>(heads.size())) {
    throw std::invalid_argument("task_model: unknown task " + std::to_string(task_index));
  }
  ActiveModel m;
  m.backbone = &backbone;
  m.bank = &bank;
  m.queries = &queries[static_cast<size_t>(task_index)];
  m.head = &heads[static_cast<size_t>(task_index)];
  m.active_adapters = queries[static_cast<size_t>(task_index)].width();
  m.mode = config.fusion;
  return m;
}

SequenceState SequenceState::clone() const {
  SequenceState out;
  out.backbone = backbone.clone();
  out.bank = bank.clone();
  for (const TaskQuerySet& q : queries) out.queries.push_back(q.clone());
  for (const TaskHead& h : heads) out.heads.push_back(h.clone());
  out.config = config;
  out.completed_tasks = completed_tasks;
  out.summaries = summaries;
  out.boundary_checksums = boundary_checksums;
  out.log = log;
  return out;
}

SequenceState make_initial_state(Backbone frozen_backbone, const TrainerConfig& cfg) {
  cfg.validate();
  if (!frozen_backbone.frozen) {
    throw std::invalid_argument("sequence: the backbone must be frozen before continual learning");
  }
  SequenceState state;
  state.backbone = std::move(frozen_backbone);
  state.bank = AdapterBank(state.backbone.cfg.model_dim, state.backbone.cfg.insertion_points());
  state.config = cfg;
  return state;
}

EvalResult evaluate(const ActiveModel& model, const TaskDataset& data, Split split,
                    int batch_size) {
  NoGradGuard no_grad;
  const auto& rows = data.split(split);
  const int n = static_cast<int>(rows.size());
  if (n == 0) throw std::invalid_argument("evaluate: empty split");
  EvalResult res;
  std::vector<double> alpha_sums;
  long long alpha_count = 0;
  double loss_sum = 0;
  int correct = 0;
  for (int at = 0; at < n; at += batch_size) {
    const int take = std::min(batch_size, n - at);
    std::vector<int> idx(static_cast<size_t>(take));
    std::iota(idx.begin(), idx.end(), at);
    SampleBatch batch = make_batch(data, idx, split);
    ActiveModel::Output out = model.forward(batch);
    loss_sum += cross_entropy(out.logits, batch.labels).scalar_value() * take;
    correct += static_cast<int>(std::lround(batch_accuracy(out.logits, batch.labels) * take));
    for (const auto& point : out.alphas) {
      if (point.empty()) continue;
      if (alpha_sums.empty()) alpha_sums.assign(point.size(), 0.0);
      for (size_t i = 0; i < point.size(); ++i) {
        for (real v : point[i].values()) alpha_sums[i] += std::abs(static_cast<double>(v));
      }
      alpha_count += point.front().size();
    }
  }
  res.loss = loss_sum / n;
  res.accuracy = static_cast<double>(correct) / n;
  if (alpha_count > 0) {
    for (double s : alpha_sums) res.alpha_mean.push_back(s / static_cast<double>(alpha_count));
  }
  return res;
}

void run_train_loop(TrainLoop& loop, const TaskDataset& data) {
  Adam opt(loop.trainables, loop.adam);
  Rng rng(loop.shuffle_seed);
  const int n = static_cast<int>(data.train.size());
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int points = loop.model.backbone->cfg.insertion_points();

  for (int epoch = 0; epoch < loop.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0, ortho_sum = 0;
    int correct = 0, batches = 0;
    std::vector<double> alpha_sums;
    long long alpha_count = 0;
    for (int at = 0; at < n; at += loop.batch_size) {
      const int take = std::min(loop.batch_size, n - at);
      SampleBatch batch = make_batch(
          data, std::span<const int>(order).subspan(static_cast<size_t>(at), static_cast<size_t>(take)));
      opt.zero_grad();
      ActiveModel::Output out = loop.model.forward(batch);
      Tensor task_loss = cross_entropy(out.logits, batch.labels);

      Tensor total = task_loss;
      double ortho_value = 0;
      if (loop.penalty_queries) {
        Tensor penalty;
        for (Tensor& stack : query_stacks(*loop.penalty_queries)) {
          Tensor term = ortho_loss(stack);
          penalty = penalty.defined() ? add(penalty, term) : term;
        }
        for (Tensor& stack : key_stacks(*loop.model.bank, loop.penalty_keys)) {
          Tensor term = ortho_loss(stack);
          penalty = penalty.defined() ? add(penalty, term) : term;
        }
        if (penalty.defined()) {
          penalty = scale(penalty, real(1) / static_cast<real>(points));
          ortho_value = penalty.scalar_value();
          if (loop.lambda > 0) {
            total = add(task_loss, scale(penalty, static_cast<real>(loop.lambda)));
          }
        }
      }

      total.backward();
      opt.step();

      loss_sum += task_loss.scalar_value() * take;
      ortho_sum += ortho_value;
      correct += static_cast<int>(std::lround(batch_accuracy(out.logits, batch.labels) * take));
      ++batches;
      for (const auto& point : out.alphas) {
        if (point.empty()) continue;
        if (alpha_sums.empty()) alpha_sums.assign(point.size(), 0.0);
        for (size_t i = 0; i < point.size(); ++i) {
          for (real v : point[i].values()) alpha_sums[i] += std::abs(static_cast<double>(v));
        }
        alpha_count += point.front().size();
      }
    }
    if (loop.log) {
      loop.log->add(loop.task_tag, loop.stage_tag, epoch, "loss", loss_sum / n);
      loop.log->add(loop.task_tag, loop.stage_tag, epoch, "acc",
                    static_cast<double>(correct) / n);
      loop.log->add(loop.task_tag, loop.stage_tag, epoch, "ortho", ortho_sum / batches);
      for (size_t i = 0; i < alpha_sums.size(); ++i) {
        loop.log->add(loop.task_tag, loop.stage_tag, epoch, "alpha." + std::to_string(i),
                      alpha_sums[i] / static_cast<double>(alpha_count));
      }
    }
  }
}

namespace {

void log_stage_summary(SequenceState& state, int task, const std::string& stage,
                       const StageMetrics& m) {
  state.log.add(task, stage, -1, "init_eval_loss", m.init_eval_loss);
  state.log.add(task, stage, -1, "final_eval_loss", m.final_eval_loss);
  state.log.add(task, stage, -1, "train_acc", m.train_acc);
  state.log.add(task, stage, -1, "val_acc", m.val_acc);
  state.log.add(task, stage, -1, "test_acc", m.test_acc);
  for (size_t i = 0; i < m.alpha_mean.size(); ++i) {
    state.log.add(task, stage, -1, "alpha_mean." + std::to_string(i), m.alpha_mean[i]);
  }
}

}  // namespace

StageMetrics run_stage1(SequenceState& state, const TaskDataset& task, const TrainerConfig& cfg) {
  cfg.validate();
  const int t = state.completed_tasks;
  if (static_cast<int>(state.heads.size()) != t || static_cast<int>(state.queries.size()) != t) {
    throw std::runtime_error("run_stage1: stage already ran for task " + std::to_string(t));
  }

  TaskHead head = TaskHead::init(state.backbone.cfg.model_dim, task.spec.classes,
                                 derive_seed(cfg.seed, "head", static_cast<uint64_t>(t)));
  TaskQuerySet qs;
  qs.task_id = t;
  qs.mode = cfg.fusion;
  qs.seq_len = state.backbone.cfg.seq_len();
  for (int i = 0; i < t; ++i) {
    qs.add_column(state.backbone.cfg.insertion_points(), state.backbone.cfg.model_dim,
                  cfg.query_init_stdev, cfg.seed);
  }
  state.heads.push_back(std::move(head));
  state.queries.push_back(std::move(qs));

  StageMetrics metrics;
  metrics.task = t;
  metrics.stage = 1;

  ActiveModel model = state.task_model(t);
  if (t == 0) {
    // Algorithm guard: the first task has no stored knowledge to combine.
    EvalResult ev = evaluate(model, task, Split::kTrain);
    metrics.init_eval_loss = metrics.final_eval_loss = ev.loss;
    metrics.train_acc = ev.accuracy;
    metrics.val_acc = evaluate(model, task, Split::kVal).accuracy;
    metrics.test_acc = evaluate(model, task, Split::kTest).accuracy;
    state.summaries.push_back({task.spec.name, metrics.test_acc, 0, metrics.final_eval_loss, 0});
    log_stage_summary(state, t, "stage1", metrics);
    return metrics;
  }

  std::vector<Tensor> trainables = state.heads.back().parameters();
  for (Tensor& q : state.queries.back().all_parameters()) trainables.push_back(q);
  if (cfg.stage1_keys_trainable) {
    for (int i = 0; i < t; ++i) {
      for (Tensor& k : state.bank.keys[static_cast<size_t>(i)].per_point) {
        k.set_requires_grad(true);
        trainables.push_back(k);
      }
    }
  }

  metrics.init_eval_loss = evaluate(model, task, Split::kTrain).loss;
  TrainLoop loop;
  loop.model = model;
  loop.trainables = trainables;
  loop.penalty_queries = &state.queries.back();
  loop.penalty_keys = t;
  loop.lambda = cfg.lambda;
  loop.epochs = cfg.epochs_stage1;
  loop.batch_size = cfg.batch_size;
  loop.adam = cfg.adam();
  loop.shuffle_seed = derive_seed(cfg.seed, "shuffle-stage1", static_cast<uint64_t>(t));
  loop.log = &state.log;
  loop.task_tag = t;
  loop.stage_tag = "stage1";
  run_train_loop(loop, task);

  if (cfg.stage1_keys_trainable) {
    for (int i = 0; i < t; ++i) {
      for (Tensor& k : state.bank.keys[static_cast<size_t>(i)].per_point) {
        k.set_requires_grad(false);
      }
    }
  }

  EvalResult ev = evaluate(model, task, Split::kTrain);
  metrics.final_eval_loss = ev.loss;
  metrics.train_acc = ev.accuracy;
  metrics.alpha_mean = ev.alpha_mean;
  metrics.val_acc = evaluate(model, task, Split::kVal).accuracy;
  metrics.test_acc = evaluate(model, task, Split::kTest).accuracy;
  state.summaries.push_back({task.spec.name, metrics.test_acc, 0, metrics.final_eval_loss, 0});
  log_stage_summary(state, t, "stage1", metrics);
  return metrics;
}

StageMetrics run_stage2(SequenceState& state, const TaskDataset& task, const TrainerConfig& cfg) {
  cfg.validate();
  const int t = state.completed_tasks;
  if (static_cast<int>(state.heads.size()) != t + 1) {
    throw std::runtime_error("run_stage2: stage 1 has not run for task " + std::to_string(t));
  }
  state.bank.add_adapter(t, cfg.bottleneck, cfg.seed);  // throws on a second call
  state.queries[static_cast<size_t>(t)].add_column(state.backbone.cfg.insertion_points(),
                                                   state.backbone.cfg.model_dim,
                                                   cfg.query_init_stdev, cfg.seed);

  StageMetrics metrics;
  metrics.task = t;
  metrics.stage = 2;

  ActiveModel model = state.task_model(t);
  metrics.init_eval_loss = evaluate(model, task, Split::kTrain).loss;

  std::vector<Tensor> trainables = state.heads.back().parameters();
  for (Tensor& p : state.bank.adapters[static_cast<size_t>(t)].parameters()) trainables.push_back(p);
  for (Tensor& k : state.bank.keys[static_cast<size_t>(t)].per_point) trainables.push_back(k);
  TaskQuerySet& qs = state.queries[static_cast<size_t>(t)];
  for (Tensor& q : qs.columns[static_cast<size_t>(t)].per_point) trainables.push_back(q);
  if (cfg.stage2_past_queries_trainable) {
    for (int i = 0; i < t; ++i) {
      for (Tensor& q : qs.columns[static_cast<size_t>(i)].per_point) trainables.push_back(q);
    }
  } else {
    for (int i = 0; i < t; ++i) qs.columns[static_cast<size_t>(i)].set_trainable(false);
  }

  TrainLoop loop;
  loop.model = model;
  loop.trainables = trainables;
  loop.penalty_queries = &qs;
  loop.penalty_keys = t + 1;
  loop.lambda = cfg.lambda;
  loop.epochs = cfg.epochs_stage2;
  loop.batch_size = cfg.batch_size;
  loop.adam = cfg.adam();
  loop.shuffle_seed = derive_seed(cfg.seed, "shuffle-stage2", static_cast<uint64_t>(t));
  loop.log = &state.log;
  loop.task_tag = t;
  loop.stage_tag = "stage2";
  run_train_loop(loop, task);

  EvalResult ev = evaluate(model, task, Split::kTrain);
  metrics.final_eval_loss = ev.loss;
  metrics.train_acc = ev.accuracy;
  metrics.alpha_mean = ev.alpha_mean;
  metrics.val_acc = evaluate(model, task, Split::kVal).accuracy;
  metrics.test_acc = evaluate(model, task, Split::kTest).accuracy;

  // task boundary: everything this task owns freezes now
  state.bank.freeze_adapter(t);
  for (QueryColumn& c : qs.columns) c.set_trainable(false);
  state.heads.back().set_trainable(false);
  state.completed_tasks = t + 1;
  TaskSummary& summary = state.summaries[static_cast<size_t>(t)];
  summary.post_expansion_test_acc = metrics.test_acc;
  summary.stage2_init_eval_loss = metrics.init_eval_loss;
  state.boundary_checksums.push_back(state.frozen_checksum());
  log_stage_summary(state, t, "stage2", metrics);
  return metrics;
}

SequenceState run_sequence(const Backbone& backbone, const std::vector<TaskDataset>& tasks,
                           const TrainerConfig& cfg) {
  if (tasks.empty()) throw std::invalid_argument("run_sequence: need at least one task");
  SequenceState state = make_initial_state(backbone.clone(), cfg);
  for (const TaskDataset& task : tasks) {
    run_stage1(state, task, cfg);
    run_stage2(state, task, cfg);
  }
  return state;
}

double evaluate_accuracy(const SequenceState& state, int task_index, const TaskDataset& data,
                         Split split) {
  return evaluate(state.task_model(task_index), data, split).accuracy;
}

}  // namespace cle
