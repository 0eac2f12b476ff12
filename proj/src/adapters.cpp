#include "cle/adapters.hpp"

#include <stdexcept>
#include <string>

#include "cle/rng.hpp"

namespace cle {

std::vector<Tensor> Adapter::parameters() const {
  std::vector<Tensor> ps;
  for (const Sub& s : at) {
    ps.push_back(s.down);
    ps.push_back(s.up);
  }
  return ps;
}

Adapter Adapter::clone() const {
  Adapter out;
  out.origin_task = origin_task;
  out.bottleneck = bottleneck;
  for (const Sub& s : at) out.at.push_back({s.down.detached_copy(), s.up.detached_copy()});
  return out;
}

std::vector<Tensor> AdapterKey::parameters() const { return per_point; }

AdapterKey AdapterKey::clone() const {
  AdapterKey out;
  out.frozen = frozen;
  for (const Tensor& t : per_point) out.per_point.push_back(t.detached_copy());
  return out;
}

int AdapterBank::add_adapter(int origin_task, int bottleneck, uint64_t seed) {
  for (const Adapter& a : adapters) {
    if (a.origin_task == origin_task) {
      throw std::runtime_error("add_adapter: task " + std::to_string(origin_task) +
                               " already owns adapter " + std::to_string(a.origin_task));
    }
  }
  Rng rng(derive_seed(seed, "adapter", static_cast<uint64_t>(origin_task)));
  Adapter a;
  a.origin_task = origin_task;
  a.bottleneck = bottleneck;
  AdapterKey key;
  for (int p = 0; p < points; ++p) {
    Adapter::Sub sub;
    sub.down = Tensor::zeros({model_dim, bottleneck}, true);
    rng.fill_normal(sub.down, 0.02);
    sub.up = Tensor::zeros({bottleneck, model_dim}, true);  // delta starts at exactly zero
    a.at.push_back(std::move(sub));

    auto unit = rng.unit_vector(model_dim);
    Tensor k = Tensor::zeros({model_dim}, true);
    for (int j = 0; j < model_dim; ++j) k.values_mut()[static_cast<size_t>(j)] = static_cast<real>(unit[static_cast<size_t>(j)]);
    key.per_point.push_back(k);
  }
  adapters.push_back(std::move(a));
  keys.push_back(std::move(key));
  return size() - 1;
}

Tensor AdapterBank::delta(int adapter, int point, const Tensor& h) const {
  if (adapter < 0 || adapter >= size()) throw std::invalid_argument("delta: adapter index out of range");
  if (point < 0 || point >= points) throw std::invalid_argument("delta: insertion point out of range");
  const Adapter::Sub& sub = adapters[static_cast<size_t>(adapter)].at[static_cast<size_t>(point)];
  return matmul(gelu(matmul(h, sub.down)), sub.up);
}

void AdapterBank::freeze_adapter(int index) {
  for (Tensor& t : adapters[static_cast<size_t>(index)].parameters()) t.set_requires_grad(false);
  AdapterKey& key = keys[static_cast<size_t>(index)];
  key.frozen = true;
  for (Tensor& t : key.per_point) t.set_requires_grad(false);
}

uint64_t AdapterBank::checksum_upto(int count) const {
  std::vector<Tensor> ps;
  for (int i = 0; i < count; ++i) {
    for (const Tensor& t : adapters[static_cast<size_t>(i)].parameters()) ps.push_back(t);
    for (const Tensor& t : keys[static_cast<size_t>(i)].per_point) ps.push_back(t);
  }
  return params_checksum(ps);
}

std::vector<Tensor> AdapterBank::all_parameters() const {
  std::vector<Tensor> ps;
  for (const Adapter& a : adapters) {
    for (const Tensor& t : a.parameters()) ps.push_back(t);
  }
  for (const AdapterKey& k : keys) {
    for (const Tensor& t : k.per_point) ps.push_back(t);
  }
  return ps;
}

AdapterBank AdapterBank::clone() const {
  AdapterBank out(model_dim, points);
  for (const Adapter& a : adapters) out.adapters.push_back(a.clone());
  for (const AdapterKey& k : keys) out.keys.push_back(k.clone());
  return out;
}

Tensor fuse(const std::vector<Tensor>& deltas, const std::vector<Tensor>& alphas, FusionMode mode) {
  if (deltas.empty()) throw std::invalid_argument("fuse: empty delta list");
  if (deltas.size() != alphas.size()) {
    throw std::invalid_argument("fuse: " + std::to_string(deltas.size()) + " deltas vs " +
                                std::to_string(alphas.size()) + " coefficients");
  }
  Tensor out;
  for (size_t i = 0; i < deltas.size(); ++i) {
    const Tensor& alpha = alphas[i];
    const int want_rank = mode == FusionMode::kAdapterLevel ? 1 : 2;
    if (alpha.rank() != want_rank) {
      throw std::invalid_argument("fuse: coefficient rank does not match fusion mode");
    }
    Tensor term = scale_rows(deltas[i], alpha);
    out = out.defined() ? add(out, term) : term;
  }
  return out;
}

}  // namespace cle
