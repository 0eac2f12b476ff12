#include "cle/optim.hpp"

#include <cmath>

namespace cle {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.values().size(), real(0));
    v_.emplace_back(p.values().size(), real(0));
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const real b1 = static_cast<real>(cfg_.beta1);
  const real b2 = static_cast<real>(cfg_.beta2);
  const real corr1 = real(1) - std::pow(b1, static_cast<real>(t_));
  const real corr2 = real(1) - std::pow(b2, static_cast<real>(t_));
  const real lr = static_cast<real>(cfg_.lr);
  const real eps = static_cast<real>(cfg_.eps);
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    const std::vector<real>& g = p.has_grad() ? p.grad() : m_[i];  // missing grad: reuse zeros
    const bool zero_grad = !p.has_grad();
    std::vector<real>& data = p.values_mut();
    for (size_t j = 0; j < data.size(); ++j) {
      const real gj = zero_grad ? real(0) : g[j];
      m_[i][j] = b1 * m_[i][j] + (real(1) - b1) * gj;
      v_[i][j] = b2 * v_[i][j] + (real(1) - b2) * gj * gj;
      const real mhat = m_[i][j] / corr1;
      const real vhat = v_[i][j] / corr2;
      data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace cle
