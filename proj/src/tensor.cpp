#include "cle/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace cle {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

long long shape_product(const std::vector<int>& shape) {
  long long p = 1;
  for (int d : shape) p *= d;
  return p;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void check_finite(const std::vector<real>& values, const char* where) {
  for (real v : values) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(where) + ": non-finite value");
    }
  }
}

void TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), real(0));
}

static void validate_shape(const std::vector<int>& shape) {
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive extent in " + shape_str(shape));
  }
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  validate_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<size_t>(shape_product(shape)), real(0));
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::full(std::vector<int> shape, real value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (real& v : t.impl()->data) v = value;
  check_finite(t.values(), "full");
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<real> values, bool requires_grad) {
  validate_shape(shape);
  if (shape_product(shape) != static_cast<long long>(values.size())) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
  check_finite(values, "from");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::scalar(real value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::identity(int n) {
  Tensor t = zeros({n, n});
  for (int i = 0; i < n; ++i) t.impl()->data[static_cast<size_t>(i) * n + i] = real(1);
  return t;
}

int Tensor::dim(int axis) const {
  int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::invalid_argument("tensor: axis out of range");
  return impl_->shape[axis];
}

real Tensor::scalar_value() const {
  if (size() != 1) throw std::invalid_argument("tensor: scalar_value on shape " + shape_str(shape()));
  return impl_->data[0];
}

const std::vector<real>& Tensor::grad() const {
  if (impl_->grad.empty()) throw std::runtime_error("tensor: no gradient present");
  return impl_->grad;
}

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->data.size(), real(0));
}

Tensor Tensor::detached_copy() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(impl);
}

static uint64_t fnv1a(const void* ptr, size_t n, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(ptr);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t tensor_checksum(const Tensor& t, uint64_t h) {
  h = fnv1a(t.shape().data(), t.shape().size() * sizeof(int), h);
  return fnv1a(t.values().data(), t.values().size() * sizeof(real), h);
}

uint64_t params_checksum(const std::vector<Tensor>& ts) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& t : ts) h = tensor_checksum(t, h);
  return h;
}

Tape build_tape(const Tensor& root) {
  Tape tape;
  std::unordered_set<TensorImpl*> seen;
  // iterative post-order DFS so parents land before users
  struct Frame {
    TensorImpl* impl;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  TensorImpl* r = root.impl().get();
  if (seen.insert(r).second) stack.push_back({r, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.impl->node && f.next_parent < f.impl->node->parents.size()) {
      TensorImpl* p = f.impl->node->parents[f.next_parent++].impl().get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      tape.order.push_back(f.impl);
      stack.pop_back();
    }
  }
  return tape;
}

void Tensor::backward() const {
  if (size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got " + shape_str(shape()));
  }
  if (impl_->backward_done) {
    throw std::runtime_error("backward: tape already traversed; rebuild the graph first");
  }
  Tape tape = build_tape(*this);
  impl_->ensure_grad();
  impl_->grad[0] = real(1);
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    TensorImpl* t = *it;
    if (t->node) {
      t->backward_done = true;
      if (!t->grad.empty()) t->node->backprop(*t);
    }
  }
  impl_->backward_done = true;
  for (TensorImpl* t : tape.order) {
    if (!t->grad.empty()) check_finite(t->grad, "backward");
  }
}

}  // namespace cle
