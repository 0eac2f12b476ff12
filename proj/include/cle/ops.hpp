#pragma once

#include <functional>
#include <vector>

#include "cle/tensor.hpp"

namespace cle {

// Dense primitives with reverse-mode backward rules. Shapes are checked up
// front; every output is scanned for non-finite values.

// [..., m, k] x [..., k, n] -> [..., m, n]. Leading dims must match, or one
// operand may be plain 2-D and is then shared across the other's batches.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);  // swaps the last two axes
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor reshape(const Tensor& a, std::vector<int> shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real c);

// b's shape must be a suffix of x's; broadcast over the leading axes.
Tensor add_bias(const Tensor& x, const Tensor& b);
// s's shape must be a prefix of x's; each trailing block is scaled.
Tensor scale_rows(const Tensor& x, const Tensor& s);

Tensor softmax(const Tensor& x, int axis);
Tensor gelu(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  real eps = real(1e-5));

// table [V, D], ids of shape id_shape -> [id_shape..., D]
Tensor embedding(const Tensor& table, const std::vector<int>& ids,
                 const std::vector<int>& id_shape);

Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor select(const Tensor& x, int axis, int index);  // drops the axis
Tensor mean_pool(const Tensor& x, int axis);          // drops the axis
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// logits [B, C], labels in [0, C) -> mean negative log-likelihood, [1]
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// cosine along the last axis of x against k [D] -> leading shape of x.
// Rows (or k) with norm below 1e-12 yield 0 with zero gradient.
Tensor cosine_rows(const Tensor& x, const Tensor& k);

// sqrt of the sum of squares; subgradient 0 at the origin.
Tensor frobenius_norm(const Tensor& x);

struct GradCheckReport {
  double max_rel_err = 0.0;
  long long coords = 0;
  bool passed = false;
};

// Central finite differences of a scalar-valued rebuild f against the
// reverse-mode gradients, over every coordinate of `wrt`.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<Tensor>& wrt, double eps = 1e-5,
                           double tol = 1e-6);

}  // namespace cle
