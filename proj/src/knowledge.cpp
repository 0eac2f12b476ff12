#include "cle/knowledge.hpp"

#include <cmath>
#include <stdexcept>

#include "cle/rng.hpp"

namespace cle {

void QueryColumn::set_trainable(bool on) {
  for (Tensor& t : per_point) t.set_requires_grad(on);
}

bool QueryColumn::trainable() const {
  return !per_point.empty() && per_point.front().requires_grad();
}

QueryColumn QueryColumn::clone() const {
  QueryColumn out;
  for (const Tensor& t : per_point) out.per_point.push_back(t.detached_copy());
  return out;
}

void TaskQuerySet::add_column(int points, int model_dim, double stdev, uint64_t seed) {
  Rng rng(derive_seed(seed, "query", static_cast<uint64_t>(task_id),
                      static_cast<uint64_t>(columns.size())));
  QueryColumn col;
  for (int p = 0; p < points; ++p) {
    Tensor q = mode == FusionMode::kAdapterLevel ? Tensor::zeros({model_dim}, true)
                                                 : Tensor::zeros({seq_len, model_dim}, true);
    if (stdev > 0) rng.fill_normal(q, stdev);
    col.per_point.push_back(q);
  }
  columns.push_back(std::move(col));
}

void TaskQuerySet::zero_column(int index) {
  for (Tensor& t : columns[static_cast<size_t>(index)].per_point) {
    std::fill(t.values_mut().begin(), t.values_mut().end(), real(0));
  }
}

std::vector<Tensor> TaskQuerySet::all_parameters() const {
  std::vector<Tensor> ps;
  for (const QueryColumn& c : columns) {
    for (const Tensor& t : c.per_point) ps.push_back(t);
  }
  return ps;
}

TaskQuerySet TaskQuerySet::clone() const {
  TaskQuerySet out;
  out.task_id = task_id;
  out.mode = mode;
  out.seq_len = seq_len;
  for (const QueryColumn& c : columns) out.columns.push_back(c.clone());
  return out;
}

Tensor cross_att_multi(const Tensor& h, const Tensor& qrows) {
  if (h.rank() != 3) throw std::invalid_argument("cross_att: hidden state must be [B,S,D]");
  if (qrows.rank() != 2 || qrows.dim(1) != h.dim(2)) {
    throw std::invalid_argument("cross_att: query shape " + shape_str(qrows.shape()) +
                                " does not match hidden " + shape_str(h.shape()));
  }
  const real inv_sqrt_d = real(1) / std::sqrt(static_cast<real>(h.dim(2)));
  // scores[b, s, m] = (h_{b,s} . q_m) / sqrt(D)
  Tensor scores = scale(matmul(h, transpose(qrows)), inv_sqrt_d);
  // d[b, m, :] = sum_s scores[b, s, m] * h[b, s, :]
  return matmul(permute(scores, {0, 2, 1}), h);
}

Tensor cross_att(const Tensor& h, const Tensor& q) {
  if (q.rank() != 1) throw std::invalid_argument("cross_att: query must be 1-D");
  Tensor d = cross_att_multi(h, reshape(q, {1, q.dim(0)}));
  return reshape(d, {h.dim(0), h.dim(2)});
}

Tensor coefficient(const Tensor& d, const Tensor& k) { return cosine_rows(d, k); }

Tensor ortho_loss(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("ortho_loss: expected a column matrix");
  const int m = x.dim(1);
  Tensor gram = matmul(transpose(x), x);
  return frobenius_norm(sub(gram, Tensor::identity(m)));
}

Tensor total_loss(const Tensor& task_loss, const std::vector<Tensor>& query_stacks,
                  const std::vector<Tensor>& key_stacks, double lambda) {
  if (lambda < 0) throw std::invalid_argument("total_loss: lambda must be >= 0");
  if (lambda == 0 || (query_stacks.empty() && key_stacks.empty())) return task_loss;
  Tensor penalty;
  auto accumulate = [&](const std::vector<Tensor>& stacks) {
    for (const Tensor& x : stacks) {
      Tensor term = ortho_loss(x);
      penalty = penalty.defined() ? add(penalty, term) : term;
    }
  };
  accumulate(query_stacks);
  accumulate(key_stacks);
  const size_t points = std::max(query_stacks.size(), key_stacks.size());
  penalty = scale(penalty, static_cast<real>(lambda / static_cast<double>(points)));
  return add(task_loss, penalty);
}

std::vector<Tensor> query_stacks(const TaskQuerySet& queries) {
  std::vector<Tensor> stacks;
  if (queries.columns.empty()) return stacks;
  const size_t points = queries.columns.front().per_point.size();
  for (size_t p = 0; p < points; ++p) {
    std::vector<Tensor> cols;
    for (const QueryColumn& c : queries.columns) {
      const Tensor& q = c.per_point[p];
      cols.push_back(reshape(q, {static_cast<int>(q.size()), 1}));
    }
    stacks.push_back(cols.size() == 1 ? cols.front() : concat(cols, 1));
  }
  return stacks;
}

std::vector<Tensor> key_stacks(const AdapterBank& bank, int count) {
  std::vector<Tensor> stacks;
  if (count <= 0) return stacks;
  for (int p = 0; p < bank.points; ++p) {
    std::vector<Tensor> cols;
    for (int i = 0; i < count; ++i) {
      cols.push_back(reshape(bank.keys[static_cast<size_t>(i)].per_point[static_cast<size_t>(p)],
                             {bank.model_dim, 1}));
    }
    stacks.push_back(cols.size() == 1 ? cols.front() : concat(cols, 1));
  }
  return stacks;
}

long long coefficient_params_per_adapter(FusionMode mode, int model_dim, int points, int seq_len) {
  const long long base = static_cast<long long>(model_dim) * points;
  return mode == FusionMode::kAdapterLevel ? base : base * seq_len;
}

}  // namespace cle
