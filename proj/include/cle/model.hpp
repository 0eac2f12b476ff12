#pragma once

#include <cstdint>
#include <vector>

#include "cle/adapters.hpp"
#include "cle/backbone.hpp"
#include "cle/knowledge.hpp"

namespace cle {

struct TaskHead {
  Tensor w;  // [D, C]
  Tensor b;  // [C]
  int classes = 0;

  static TaskHead init(int model_dim, int classes, uint64_t seed);
  std::vector<Tensor> parameters() const { return {w, b}; }
  void set_trainable(bool on);
  TaskHead clone() const;
};

// One task's view of the composed model: frozen backbone, the first
// `active_adapters` bank entries weighted by this task's queries, and the
// task head. queries may be null only when no adapters are active.
struct ActiveModel {
  const Backbone* backbone = nullptr;
  const AdapterBank* bank = nullptr;
  const TaskQuerySet* queries = nullptr;
  const TaskHead* head = nullptr;
  int active_adapters = 0;
  FusionMode mode = FusionMode::kAdapterLevel;

  struct Output {
    Tensor logits;
    // alphas[point][adapter]: [B] (adapter-level) or [B, S] (token-level)
    std::vector<std::vector<Tensor>> alphas;
  };

  Output forward(const SampleBatch& batch) const;
};

double batch_accuracy(const Tensor& logits, const std::vector<int>& labels);

// Mean |alpha| per adapter, averaged over batch, sequence and insertion points.
std::vector<double> mean_abs_alpha(const ActiveModel::Output& out);

}  // namespace cle
