#include "cle/model.hpp"

#include <cmath>
#include <stdexcept>

#include "cle/rng.hpp"

namespace cle {

TaskHead TaskHead::init(int model_dim, int classes, uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("task head: need at least two classes");
  Rng rng(derive_seed(seed, "head"));
  TaskHead h;
  h.classes = classes;
  h.w = Tensor::zeros({model_dim, classes}, true);
  rng.fill_normal(h.w, 0.02);
  h.b = Tensor::zeros({classes}, true);
  return h;
}

void TaskHead::set_trainable(bool on) {
  w.set_requires_grad(on);
  b.set_requires_grad(on);
}

TaskHead TaskHead::clone() const {
  TaskHead out;
  out.classes = classes;
  out.w = w.detached_copy();
  out.b = b.detached_copy();
  return out;
}

ActiveModel::Output ActiveModel::forward(const SampleBatch& batch) const {
  if (!backbone || !head) throw std::invalid_argument("model: backbone and head are required");
  if (active_adapters > 0) {
    if (!bank || bank->size() < active_adapters) {
      throw std::invalid_argument("model: bank smaller than active adapter count");
    }
    if (!queries || queries->width() < active_adapters) {
      throw std::invalid_argument("model: query set narrower than active adapter count");
    }
  }

  Output out;
  out.alphas.assign(static_cast<size_t>(backbone->cfg.insertion_points()), {});

  AdapterHook hook = [&](const Tensor& h, int point) -> Tensor {
    std::vector<Tensor> deltas, alphas;
    deltas.reserve(static_cast<size_t>(active_adapters));
    alphas.reserve(static_cast<size_t>(active_adapters));
    for (int i = 0; i < active_adapters; ++i) {
      const Tensor& q = queries->columns[static_cast<size_t>(i)].per_point[static_cast<size_t>(point)];
      const Tensor& key = bank->keys[static_cast<size_t>(i)].per_point[static_cast<size_t>(point)];
      Tensor alpha;
      if (mode == FusionMode::kAdapterLevel) {
        alpha = coefficient(cross_att(h, q), key);  // [B]
      } else {
        alpha = coefficient(cross_att_multi(h, q), key);  // [B, S]
      }
      deltas.push_back(bank->delta(i, point, h));
      alphas.push_back(alpha);
    }
    out.alphas[static_cast<size_t>(point)] = alphas;
    return fuse(deltas, alphas, mode);
  };

  BackboneForward fwd = backbone->forward(batch, active_adapters > 0 ? &hook : nullptr);
  out.logits = add_bias(matmul(fwd.cls, head->w), head->b);
  return out;
}

double batch_accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const int b = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != b) {
    throw std::invalid_argument("accuracy: label count mismatch");
  }
  int correct = 0;
  for (int i = 0; i < b; ++i) {
    const real* row = logits.values().data() + static_cast<size_t>(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (best == labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / b;
}

std::vector<double> mean_abs_alpha(const ActiveModel::Output& out) {
  std::vector<double> sums;
  long long denom = 0;
  for (const auto& point : out.alphas) {
    if (point.empty()) continue;
    if (sums.empty()) sums.assign(point.size(), 0.0);
    for (size_t i = 0; i < point.size(); ++i) {
      for (real v : point[i].values()) sums[i] += std::abs(static_cast<double>(v));
    }
    denom += point.front().size();
  }
  for (double& s : sums) s /= denom > 0 ? static_cast<double>(denom) : 1.0;
  return sums;
}

}  // namespace cle
