#pragma once

#include <vector>

#include "cle/tensor.hpp"

namespace cle {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment optimizer over an explicit parameter list. State lives for
// one stage; stages construct a fresh instance.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  void zero_grad();
  void step();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<real>> m_, v_;
  AdamConfig cfg_;
  long long t_ = 0;
};

}  // namespace cle
