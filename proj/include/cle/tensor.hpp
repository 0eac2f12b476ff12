#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cle {

#ifdef CLE_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

class Tensor;

// Producer record for a non-leaf tensor. backprop reads the output's grad
// and accumulates into the parents' grads.
struct Node {
  std::vector<Tensor> parents;
  std::function<void(struct TensorImpl&)> backprop;
};

struct TensorImpl {
  std::vector<int> shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool backward_done = false;
  std::shared_ptr<Node> node;  // null for leaves

  long long size() const { return static_cast<long long>(data.size()); }
  void ensure_grad();
};

// Value-semantics handle to a shared tensor record. Copies alias the same
// storage; deep copies go through detached_copy().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, real value, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<real> values,
                     bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);
  static Tensor identity(int n);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int axis) const;
  long long size() const { return impl_->size(); }

  const std::vector<real>& values() const { return impl_->data; }
  // Leaf mutation for parameter updates; any graph built on the old values
  // is stale afterwards.
  std::vector<real>& values_mut() { return impl_->data; }
  real scalar_value() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<real>& grad() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar root. One traversal per forward build;
  // a second call on the same graph throws.
  void backward() const;

  Tensor detached_copy() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of one backward traversal: parents precede users.
struct Tape {
  std::vector<TensorImpl*> order;
};

Tape build_tape(const Tensor& root);

// Autograd toggle; ops skip node creation while disabled.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

long long shape_product(const std::vector<int>& shape);
void check_finite(const std::vector<real>& values, const char* where);
std::string shape_str(const std::vector<int>& shape);

// FNV-1a over the raw bytes of shape and data; used for freeze audits and
// checkpoint integrity.
uint64_t tensor_checksum(const Tensor& t, uint64_t h = 0xcbf29ce484222325ULL);
uint64_t params_checksum(const std::vector<Tensor>& ts);

}  // namespace cle
