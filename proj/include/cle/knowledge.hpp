#pragma once

#include <cstdint>
#include <vector>

#include "cle/adapters.hpp"
#include "cle/ops.hpp"

namespace cle {

// One task's learnable queries, one column per covered adapter. Columns hold
// a [D] query per insertion point (adapter-level fusion) or an [S, D] query
// matrix per insertion point (token-level fusion).
struct QueryColumn {
  std::vector<Tensor> per_point;

  std::vector<Tensor> parameters() const { return per_point; }
  void set_trainable(bool on);
  bool trainable() const;
  QueryColumn clone() const;
};

struct TaskQuerySet {
  int task_id = -1;
  FusionMode mode = FusionMode::kAdapterLevel;
  int seq_len = 0;  // only used by token-level queries
  std::vector<QueryColumn> columns;

  int width() const { return static_cast<int>(columns.size()); }

  // Small random init for columns pointing at existing adapters; stdev 0 pins
  // the column (and hence its coefficients) to exactly zero.
  void add_column(int points, int model_dim, double stdev, uint64_t seed);
  void zero_column(int index);
  std::vector<Tensor> all_parameters() const;
  TaskQuerySet clone() const;
};

// Projection-free multiplicative cross-attention: scores = (h q) / sqrt(D),
// d_b = sum_s scores_{b,s} h_{b,s}. No softmax, no learned projections, so a
// zero query yields an exactly-zero description.
Tensor cross_att(const Tensor& h, const Tensor& q);            // [B,S,D], [D]   -> [B,D]
Tensor cross_att_multi(const Tensor& h, const Tensor& qrows);  // [B,S,D], [m,D] -> [B,m,D]

// Cosine similarity per sample; 0 by convention when either norm vanishes.
Tensor coefficient(const Tensor& d, const Tensor& k);

// ||X^T X - I||_F over the columns of X.
Tensor ortho_loss(const Tensor& x);

// task_loss + lambda * mean over insertion points of (ortho(q) + ortho(K)).
// Either stack list may be empty; its term is then zero.
Tensor total_loss(const Tensor& task_loss, const std::vector<Tensor>& query_stacks,
                  const std::vector<Tensor>& key_stacks, double lambda);

// Column-stacked matrices for the ortho penalty, one per insertion point.
// Token-level queries are flattened to [S*D] columns.
std::vector<Tensor> query_stacks(const TaskQuerySet& queries);
std::vector<Tensor> key_stacks(const AdapterBank& bank, int count);

// Learnable coefficient parameters per adapter (the query), by fusion mode.
long long coefficient_params_per_adapter(FusionMode mode, int model_dim, int points, int seq_len);

}  // namespace cle
