#pragma once

#include <cstdint>
#include <vector>

#include "cle/ops.hpp"

namespace cle {

enum class FusionMode { kAdapterLevel, kTokenLevel };

// Bottleneck module replicated at every insertion point. A fresh adapter has
// a zero up-projection, so its delta is exactly zero until trained.
struct Adapter {
  int origin_task = -1;
  int bottleneck = 8;
  struct Sub {
    Tensor down;  // [D, r]
    Tensor up;    // [r, D]
  };
  std::vector<Sub> at;  // one per insertion point

  std::vector<Tensor> parameters() const;
  Adapter clone() const;
};

// Per-adapter reference key, one [D] vector per insertion point. Keys freeze
// permanently once their task's expansion stage completes.
struct AdapterKey {
  std::vector<Tensor> per_point;
  bool frozen = false;

  std::vector<Tensor> parameters() const;
  AdapterKey clone() const;
};

struct AdapterBank {
  int model_dim = 0;
  int points = 0;
  std::vector<Adapter> adapters;
  std::vector<AdapterKey> keys;

  AdapterBank() = default;
  AdapterBank(int model_dim, int points) : model_dim(model_dim), points(points) {}

  int size() const { return static_cast<int>(adapters.size()); }

  // Appends one adapter (zero up-projection) plus a random unit key per
  // insertion point. At most one adapter per task.
  int add_adapter(int origin_task, int bottleneck, uint64_t seed);

  // up(GELU(down(h))); the residual is the backbone's job.
  Tensor delta(int adapter, int point, const Tensor& h) const;

  void freeze_adapter(int index);
  uint64_t checksum_upto(int count) const;  // adapters and keys [0, count)
  std::vector<Tensor> all_parameters() const;
  AdapterBank clone() const;
};

// Coefficient-weighted sum of adapter deltas. Adapter-level alphas are [B];
// token-level alphas are [B, S].
Tensor fuse(const std::vector<Tensor>& deltas, const std::vector<Tensor>& alphas, FusionMode mode);

}  // namespace cle
