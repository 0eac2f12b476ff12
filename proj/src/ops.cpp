#include "cle/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cle {

namespace {

Tensor make_op(std::vector<int> shape, std::vector<real> data, std::vector<Tensor> parents,
               std::function<void(TensorImpl&)> backprop, const char* name) {
  check_finite(data, name);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
  }
  if (needs_grad) {
    impl->requires_grad = true;
    impl->node = std::make_shared<Node>();
    impl->node->parents = std::move(parents);
    impl->node->backprop = std::move(backprop);
  }
  return Tensor(impl);
}

TensorImpl& parent(TensorImpl& out, size_t i) { return *out.node->parents[i].impl(); }

bool wants(TensorImpl& p) { return p.requires_grad; }

constexpr real kNormFloor = real(1e-12);
const real kInvSqrt2 = real(1) / std::sqrt(real(2));
const real kInvSqrt2Pi = real(1) / std::sqrt(real(2) * real(M_PI));

int norm_axis(const Tensor& t, int axis, const char* name) {
  int r = t.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw std::invalid_argument(std::string(name) + ": axis out of range for " + shape_str(t.shape()));
  }
  return axis;
}

std::vector<long long> strides_of(const std::vector<int>& shape) {
  std::vector<long long> st(shape.size());
  long long s = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = s;
    s *= shape[static_cast<size_t>(i)];
  }
  return st;
}

// outer extent before `axis`, the axis extent, and inner extent after it
struct AxisSplit {
  long long outer, n, inner;
};

AxisSplit split_at(const std::vector<int>& shape, int axis) {
  AxisSplit sp{1, shape[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) sp.inner *= shape[i];
  return sp;
}

// rank-1 update loops, blocked four rows at a time
void mm_forward(const real* A, const real* B, real* C, int m, int k, int n) {
  int i = 0;
  for (; i + 3 < m; i += 4) {
    const real* a0 = A + static_cast<size_t>(i) * k;
    const real* a1 = a0 + k;
    const real* a2 = a1 + k;
    const real* a3 = a2 + k;
    real* c0 = C + static_cast<size_t>(i) * n;
    real* c1 = c0 + n;
    real* c2 = c1 + n;
    real* c3 = c2 + n;
    for (int l = 0; l < k; ++l) {
      const real av0 = a0[l], av1 = a1[l], av2 = a2[l], av3 = a3[l];
      const real* b = B + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) {
        const real bv = b[j];
        c0[j] += av0 * bv;
        c1[j] += av1 * bv;
        c2[j] += av2 * bv;
        c3[j] += av3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    const real* a = A + static_cast<size_t>(i) * k;
    real* c = C + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const real av = a[l];
      const real* b = B + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

void mm_grad_a(const real* dC, const real* B, real* dA, int m, int k, int n) {
  int i = 0;
  for (; i + 1 < m; i += 2) {
    const real* dc0 = dC + static_cast<size_t>(i) * n;
    const real* dc1 = dc0 + n;
    real* da0 = dA + static_cast<size_t>(i) * k;
    real* da1 = da0 + k;
    for (int l = 0; l < k; ++l) {
      const real* b = B + static_cast<size_t>(l) * n;
      real s0 = 0, s1 = 0;
      for (int j = 0; j < n; ++j) {
        const real bv = b[j];
        s0 += dc0[j] * bv;
        s1 += dc1[j] * bv;
      }
      da0[l] += s0;
      da1[l] += s1;
    }
  }
  for (; i < m; ++i) {
    const real* dc = dC + static_cast<size_t>(i) * n;
    real* da = dA + static_cast<size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const real* b = B + static_cast<size_t>(l) * n;
      real s = 0;
      for (int j = 0; j < n; ++j) s += dc[j] * b[j];
      da[l] += s;
    }
  }
}

void mm_grad_b(const real* A, const real* dC, real* dB, int m, int k, int n) {
  int i = 0;
  for (; i + 3 < m; i += 4) {
    const real* a0 = A + static_cast<size_t>(i) * k;
    const real* a1 = a0 + k;
    const real* a2 = a1 + k;
    const real* a3 = a2 + k;
    const real* dc0 = dC + static_cast<size_t>(i) * n;
    const real* dc1 = dc0 + n;
    const real* dc2 = dc1 + n;
    const real* dc3 = dc2 + n;
    for (int l = 0; l < k; ++l) {
      const real av0 = a0[l], av1 = a1[l], av2 = a2[l], av3 = a3[l];
      real* db = dB + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) {
        db[j] += av0 * dc0[j] + av1 * dc1[j] + av2 * dc2[j] + av3 * dc3[j];
      }
    }
  }
  for (; i < m; ++i) {
    const real* a = A + static_cast<size_t>(i) * k;
    const real* dc = dC + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const real av = a[l];
      real* db = dB + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) db[j] += av * dc[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw std::invalid_argument("matmul: operands must have rank >= 2, got " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int m = a.dim(-2), ka = a.dim(-1);
  const int kb = b.dim(-2), n = b.dim(-1);
  if (ka != kb) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  std::vector<int> a_lead(a.shape().begin(), a.shape().end() - 2);
  std::vector<int> b_lead(b.shape().begin(), b.shape().end() - 2);
  std::vector<int> lead;
  bool a_batched = true, b_batched = true;
  if (a_lead == b_lead) {
    lead = a_lead;
  } else if (b_lead.empty()) {
    lead = a_lead;
    b_batched = false;
  } else if (a_lead.empty()) {
    lead = b_lead;
    a_batched = false;
  } else {
    throw std::invalid_argument("matmul: incompatible batch dims, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  const long long nb = shape_product(lead);
  std::vector<int> out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<real> out(static_cast<size_t>(nb) * m * n, real(0));
  const real* A = a.values().data();
  const real* B = b.values().data();
  for (long long i = 0; i < nb; ++i) {
    mm_forward(A + (a_batched ? i * m * ka : 0), B + (b_batched ? i * ka * n : 0),
               out.data() + i * m * n, m, ka, n);
  }
  const int k = ka;
  return make_op(
      std::move(out_shape), std::move(out), {a, b},
      [m, k, n, nb, a_batched, b_batched](TensorImpl& o) {
        TensorImpl& pa = parent(o, 0);
        TensorImpl& pb = parent(o, 1);
        const real* G = o.grad.data();
        if (wants(pa)) {
          pa.ensure_grad();
          for (long long i = 0; i < nb; ++i) {
            mm_grad_a(G + i * m * n, pb.data.data() + (b_batched ? i * k * n : 0),
                      pa.grad.data() + (a_batched ? i * m * k : 0), m, k, n);
          }
        }
        if (wants(pb)) {
          pb.ensure_grad();
          for (long long i = 0; i < nb; ++i) {
            mm_grad_b(pa.data.data() + (a_batched ? i * m * k : 0), G + i * m * n,
                      pb.grad.data() + (b_batched ? i * k * n : 0), m, k, n);
          }
        }
      },
      "matmul");
}

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
  const int r = a.rank();
  if (static_cast<int>(axes.size()) != r) throw std::invalid_argument("permute: axes size mismatch");
  std::vector<bool> used(static_cast<size_t>(r), false);
  for (int ax : axes) {
    if (ax < 0 || ax >= r || used[static_cast<size_t>(ax)]) {
      throw std::invalid_argument("permute: axes must be a permutation");
    }
    used[static_cast<size_t>(ax)] = true;
  }
  std::vector<int> out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = a.dim(axes[static_cast<size_t>(i)]);
  const auto in_strides = strides_of(a.shape());
  const auto out_strides = strides_of(out_shape);
  const long long total = a.size();

  // in-linear index for every out-linear index
  std::vector<long long> map(static_cast<size_t>(total));
  for (long long oi = 0; oi < total; ++oi) {
    long long rem = oi, ii = 0;
    for (int d = 0; d < r; ++d) {
      const long long idx = rem / out_strides[static_cast<size_t>(d)];
      rem %= out_strides[static_cast<size_t>(d)];
      ii += idx * in_strides[static_cast<size_t>(axes[static_cast<size_t>(d)])];
    }
    map[static_cast<size_t>(oi)] = ii;
  }
  std::vector<real> out(static_cast<size_t>(total));
  const real* src = a.values().data();
  for (long long oi = 0; oi < total; ++oi) out[static_cast<size_t>(oi)] = src[map[static_cast<size_t>(oi)]];
  return make_op(
      std::move(out_shape), std::move(out), {a},
      [map = std::move(map), total](TensorImpl& o) {
        TensorImpl& pa = parent(o, 0);
        if (!wants(pa)) return;
        pa.ensure_grad();
        for (long long oi = 0; oi < total; ++oi) {
          pa.grad[static_cast<size_t>(map[static_cast<size_t>(oi)])] += o.grad[static_cast<size_t>(oi)];
        }
      },
      "permute");
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw std::invalid_argument("transpose: rank must be >= 2");
  std::vector<int> axes(static_cast<size_t>(a.rank()));
  for (int i = 0; i < a.rank(); ++i) axes[static_cast<size_t>(i)] = i;
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(a, axes);
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_product(shape) != a.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(shape));
  }
  std::vector<real> out = a.values();
  return make_op(
      std::move(shape), std::move(out), {a},
      [](TensorImpl& o) {
        TensorImpl& pa = parent(o, 0);
        if (!wants(pa)) return;
        pa.ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i];
      },
      "reshape");
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* name) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(name) + ": shape mismatch, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<real> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op(
      a.shape(), std::move(out), {a, b},
      [](TensorImpl& o) {
        for (size_t p = 0; p < 2; ++p) {
          TensorImpl& pp = parent(o, p);
          if (!wants(pp)) continue;
          pp.ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) pp.grad[i] += o.grad[i];
        }
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<real> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op(
      a.shape(), std::move(out), {a, b},
      [](TensorImpl& o) {
        TensorImpl& pa = parent(o, 0);
        TensorImpl& pb = parent(o, 1);
        if (wants(pa)) {
          pa.ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i];
        }
        if (wants(pb)) {
          pb.ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] -= o.grad[i];
        }
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<real> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_op(
      a.shape(), std::move(out), {a, b},
      [](TensorImpl& o) {
        TensorImpl& pa = parent(o, 0);
        TensorImpl& pb = parent(o, 1);
        if (wants(pa)) {
          pa.ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i] * pb.data[i];
        }
        if (wants(pb)) {
          pb.ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] += o.grad[i] * pa.data[i];
        }
      },
      "mul");
}

Tensor scale(const Tensor& a, real c) {
  if (!std::isfinite(c)) throw std::invalid_argument("scale: non-finite factor");
  std::vector<real> out(a.values());
  for (real& v : out) v *= c;
  return make_op(
      a.shape(), std::move(out), {a},
      [c](TensorImpl& o) {
        TensorImpl& pa = parent(o, 0);
        if (!wants(pa)) return;
        pa.ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += c * o.grad[i];
      },
      "scale");
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  const int rx = x.rank(), rb = b.rank();
  if (rb > rx) throw std::invalid_argument("add_bias: bias rank exceeds input rank");
  for (int i = 0; i < rb; ++i) {
    if (b.dim(i) != x.dim(rx - rb + i)) {
      throw std::invalid_argument("add_bias: " + shape_str(b.shape()) + " is not a suffix of " +
                                  shape_str(x.shape()));
    }
  }
  const long long bs = b.size();
  std::vector<real> out(x.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i % static_cast<size_t>(bs)];
  return make_op(
      x.shape(), std::move(out), {x, b},
      [bs](TensorImpl& o) {
        TensorImpl& px = parent(o, 0);
        TensorImpl& pb = parent(o, 1);
        if (wants(px)) {
          px.ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) px.grad[i] += o.grad[i];
        }
        if (wants(pb)) {
          pb.ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) {
            pb.grad[i % static_cast<size_t>(bs)] += o.grad[i];
          }
        }
      },
      "add_bias");
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  const int rx = x.rank(), rs = s.rank();
  if (rs > rx) throw std::invalid_argument("scale_rows: scale rank exceeds input rank");
  for (int i = 0; i < rs; ++i) {
    if (s.dim(i) != x.dim(i)) {
      throw std::invalid_argument("scale_rows: " + shape_str(s.shape()) + " is not a prefix of " +
                                  shape_str(x.shape()));
    }
  }
  const long long block = x.size() / s.size();
  std::vector<real> out(x.values());
  const auto& sv = s.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= sv[i / static_cast<size_t>(block)];
  return make_op(
      x.shape(), std::move(out), {x, s},
      [block](TensorImpl& o) {
        TensorImpl& px = parent(o, 0);
        TensorImpl& ps = parent(o, 1);
        if (wants(px)) {
          px.ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) {
            px.grad[i] += o.grad[i] * ps.data[i / static_cast<size_t>(block)];
          }
        }
        if (wants(ps)) {
          ps.ensure_grad();
          for (size_t i = 0; i < o.grad.size(); ++i) {
            ps.grad[i / static_cast<size_t>(block)] += o.grad[i] * px.data[i];
          }
        }
      },
      "scale_rows");
}

Tensor softmax(const Tensor& x, int axis) {
  const int ax = norm_axis(x, axis, "softmax");
  const AxisSplit sp = split_at(x.shape(), ax);
  std::vector<real> out(x.values().size());
  const real* src = x.values().data();
  for (long long o = 0; o < sp.outer; ++o) {
    for (long long in = 0; in < sp.inner; ++in) {
      const long long base = o * sp.n * sp.inner + in;
      real mx = src[base];
      for (long long i = 1; i < sp.n; ++i) mx = std::max(mx, src[base + i * sp.inner]);
      real sum = 0;
      for (long long i = 0; i < sp.n; ++i) {
        const real e = std::exp(src[base + i * sp.inner] - mx);
        out[static_cast<size_t>(base + i * sp.inner)] = e;
        sum += e;
      }
      for (long long i = 0; i < sp.n; ++i) out[static_cast<size_t>(base + i * sp.inner)] /= sum;
    }
  }
  std::vector<real> probs = out;  // kept for the backward rule
  return make_op(
      x.shape(), std::move(out), {x},
      [sp, probs = std::move(probs)](TensorImpl& o) {
        TensorImpl& px = parent(o, 0);
        if (!wants(px)) return;
        px.ensure_grad();
        for (long long ou = 0; ou < sp.outer; ++ou) {
          for (long long in = 0; in < sp.inner; ++in) {
            const long long base = ou * sp.n * sp.inner + in;
            real dot = 0;
            for (long long i = 0; i < sp.n; ++i) {
              const size_t idx = static_cast<size_t>(base + i * sp.inner);
              dot += o.grad[idx] * probs[idx];
            }
            for (long long i = 0; i < sp.n; ++i) {
              const size_t idx = static_cast<size_t>(base + i * sp.inner);
              px.grad[idx] += probs[idx] * (o.grad[idx] - dot);
            }
          }
        }
      },
      "softmax");
}

Tensor gelu(const Tensor& x) {
  std::vector<real> out(x.values().size());
  const auto& xv = x.values();
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = real(0.5) * xv[i] * (real(1) + std::erf(xv[i] * kInvSqrt2));
  }
  return make_op(
      x.shape(), std::move(out), {x},
      [](TensorImpl& o) {
        TensorImpl& px = parent(o, 0);
        if (!wants(px)) return;
        px.ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
          const real v = px.data[i];
          const real cdf = real(0.5) * (real(1) + std::erf(v * kInvSqrt2));
          const real pdf = kInvSqrt2Pi * std::exp(real(-0.5) * v * v);
          px.grad[i] += o.grad[i] * (cdf + v * pdf);
        }
      },
      "gelu");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
  const int d = x.dim(-1);
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d) {
    throw std::invalid_argument("layer_norm: gamma/beta must be [" + std::to_string(d) + "]");
  }
  const long long rows = x.size() / d;
  std::vector<real> out(x.values().size());
  std::vector<real> xhat(x.values().size());
  std::vector<real> inv_std(static_cast<size_t>(rows));
  const real* src = x.values().data();
  const real* g = gamma.values().data();
  const real* b = beta.values().data();
  for (long long r = 0; r < rows; ++r) {
    const real* row = src + r * d;
    real mu = 0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= d;
    real var = 0;
    for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= d;
    const real inv = real(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = inv;
    for (int j = 0; j < d; ++j) {
      const real xh = (row[j] - mu) * inv;
      xhat[static_cast<size_t>(r * d + j)] = xh;
      out[static_cast<size_t>(r * d + j)] = xh * g[j] + b[j];
    }
  }
  return make_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& o) {
        TensorImpl& px = parent(o, 0);
        TensorImpl& pg = parent(o, 1);
        TensorImpl& pb = parent(o, 2);
        if (wants(pg)) pg.ensure_grad();
        if (wants(pb)) pb.ensure_grad();
        if (wants(px)) px.ensure_grad();
        for (long long r = 0; r < rows; ++r) {
          const size_t base = static_cast<size_t>(r * d);
          if (wants(pg) || wants(pb)) {
            for (int j = 0; j < d; ++j) {
              if (wants(pg)) pg.grad[static_cast<size_t>(j)] += o.grad[base + j] * xhat[base + j];
              if (wants(pb)) pb.grad[static_cast<size_t>(j)] += o.grad[base + j];
            }
          }
          if (wants(px)) {
            real mean_dxh = 0, mean_dxh_xh = 0;
            for (int j = 0; j < d; ++j) {
              const real dxh = o.grad[base + j] * pg.data[static_cast<size_t>(j)];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xhat[base + j];
            }
            mean_dxh /= d;
            mean_dxh_xh /= d;
            const real inv = inv_std[static_cast<size_t>(r)];
            for (int j = 0; j < d; ++j) {
              const real dxh = o.grad[base + j] * pg.data[static_cast<size_t>(j)];
              px.grad[base + j] += inv * (dxh - mean_dxh - xhat[base + j] * mean_dxh_xh);
            }
          }
        }
      },
      "layer_norm");
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids,
                 const std::vector<int>& id_shape) {
  if (table.rank() != 2) throw std::invalid_argument("embedding: table must be 2-D");
  if (shape_product(id_shape) != static_cast<long long>(ids.size())) {
    throw std::invalid_argument("embedding: id_shape does not match id count");
  }
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw std::invalid_argument("embedding: id " + std::to_string(id) + " outside vocabulary of " +
                                  std::to_string(v));
    }
  }
  std::vector<int> out_shape = id_shape;
  out_shape.push_back(d);
  std::vector<real> out(ids.size() * static_cast<size_t>(d));
  const real* src = table.values().data();
  for (size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(src + static_cast<size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  return make_op(
      std::move(out_shape), std::move(out), {table},
      [ids, d](TensorImpl& o) {
        TensorImpl& pt = parent(o, 0);
        if (!wants(pt)) return;
        pt.ensure_grad();
        for (size_t i = 0; i < ids.size(); ++i) {
          real* dst = pt.grad.data() + static_cast<size_t>(ids[i]) * d;
          const real* g = o.grad.data() + i * d;
          for (int j = 0; j < d; ++j) dst[j] += g[j];
        }
      },
      "embedding");
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input list");
  const int ax = norm_axis(xs[0], axis, "concat");
  const int r = xs[0].rank();
  int total_axis = 0;
  for (const Tensor& x : xs) {
    if (x.rank() != r) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != ax && x.dim(i) != xs[0].dim(i)) {
        throw std::invalid_argument("concat: shape mismatch off the concat axis");
      }
    }
    total_axis += x.dim(ax);
  }
  std::vector<int> out_shape = xs[0].shape();
  out_shape[static_cast<size_t>(ax)] = total_axis;
  const AxisSplit sp = split_at(out_shape, ax);
  std::vector<real> out(static_cast<size_t>(sp.outer * sp.n * sp.inner));
  std::vector<long long> chunk(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) chunk[i] = static_cast<long long>(xs[i].dim(ax)) * sp.inner;
  for (long long o = 0; o < sp.outer; ++o) {
    long long off = o * sp.n * sp.inner;
    for (size_t i = 0; i < xs.size(); ++i) {
      const real* src = xs[i].values().data() + o * chunk[i];
      std::copy_n(src, chunk[i], out.data() + off);
      off += chunk[i];
    }
  }
  return make_op(
      std::move(out_shape), std::move(out), xs,
      [sp, chunk = std::move(chunk)](TensorImpl& o) {
        for (long long ou = 0; ou < sp.outer; ++ou) {
          long long off = ou * sp.n * sp.inner;
          for (size_t i = 0; i < chunk.size(); ++i) {
            TensorImpl& p = parent(o, i);
            if (wants(p)) {
              p.ensure_grad();
              real* dst = p.grad.data() + ou * chunk[i];
              const real* g = o.grad.data() + off;
              for (long long j = 0; j < chunk[i]; ++j) dst[j] += g[j];
            }
            off += chunk[i];
          }
        }
      },
      "concat");
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
  const int ax = norm_axis(x, axis, "slice");
  if (start < 0 || len <= 0 || start + len > x.dim(ax)) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") outside extent " +
                                std::to_string(x.dim(ax)));
  }
  const AxisSplit sp = split_at(x.shape(), ax);
  std::vector<int> out_shape = x.shape();
  out_shape[static_cast<size_t>(ax)] = len;
  std::vector<real> out(static_cast<size_t>(sp.outer * len * sp.inner));
  const real* src = x.values().data();
  for (long long o = 0; o < sp.outer; ++o) {
    std::copy_n(src + (o * sp.n + start) * sp.inner, static_cast<long long>(len) * sp.inner,
                out.data() + o * len * sp.inner);
  }
  return make_op(
      std::move(out_shape), std::move(out), {x},
      [sp, start, len](TensorImpl& o) {
        TensorImpl& px = parent(o, 0);
        if (!wants(px)) return;
        px.ensure_grad();
        for (long long ou = 0; ou < sp.outer; ++ou) {
          real* dst = px.grad.data() + (ou * sp.n + start) * sp.inner;
          const real* g = o.grad.data() + ou * len * sp.inner;
          for (long long j = 0; j < static_cast<long long>(len) * sp.inner; ++j) dst[j] += g[j];
        }
      },
      "slice");
}

Tensor select(const Tensor& x, int axis, int index) {
  const int ax = norm_axis(x, axis, "select");
  Tensor s = slice(x, ax, index, 1);
  std::vector<int> out_shape;
  for (int i = 0; i < x.rank(); ++i) {
    if (i != ax) out_shape.push_back(x.dim(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  return reshape(s, out_shape);
}

Tensor mean_pool(const Tensor& x, int axis) {
  const int ax = norm_axis(x, axis, "mean_pool");
  const AxisSplit sp = split_at(x.shape(), ax);
  std::vector<int> out_shape;
  for (int i = 0; i < x.rank(); ++i) {
    if (i != ax) out_shape.push_back(x.dim(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<real> out(static_cast<size_t>(sp.outer * sp.inner), real(0));
  const real* src = x.values().data();
  for (long long o = 0; o < sp.outer; ++o) {
    for (long long i = 0; i < sp.n; ++i) {
      for (long long in = 0; in < sp.inner; ++in) {
        out[static_cast<size_t>(o * sp.inner + in)] += src[(o * sp.n + i) * sp.inner + in];
      }
    }
  }
  for (real& v : out) v /= static_cast<real>(sp.n);
  return make_op(
      std::move(out_shape), std::move(out), {x},
      [sp](TensorImpl& o) {
        TensorImpl& px = parent(o, 0);
        if (!wants(px)) return;
        px.ensure_grad();
        const real inv = real(1) / static_cast<real>(sp.n);
        for (long long ou = 0; ou < sp.outer; ++ou) {
          for (long long i = 0; i < sp.n; ++i) {
            for (long long in = 0; in < sp.inner; ++in) {
              px.grad[static_cast<size_t>((ou * sp.n + i) * sp.inner + in)] +=
                  o.grad[static_cast<size_t>(ou * sp.inner + in)] * inv;
            }
          }
        }
      },
      "mean_pool");
}

Tensor sum_all(const Tensor& x) {
  real s = 0;
  for (real v : x.values()) s += v;
  return make_op(
      {1}, {s}, {x},
      [](TensorImpl& o) {
        TensorImpl& px = parent(o, 0);
        if (!wants(px)) return;
        px.ensure_grad();
        for (real& g : px.grad) g += o.grad[0];
      },
      "sum_all");
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), real(1) / static_cast<real>(x.size()));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be [B, C]");
  const int bsz = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != bsz) {
    throw std::invalid_argument("cross_entropy: label count mismatch");
  }
  for (int l : labels) {
    if (l < 0 || l >= c) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                                  std::to_string(c) + ")");
    }
  }
  const real* z = logits.values().data();
  std::vector<real> probs(static_cast<size_t>(bsz) * c);
  real loss = 0;
  for (int b = 0; b < bsz; ++b) {
    const real* row = z + static_cast<size_t>(b) * c;
    real mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    real sum = 0;
    for (int j = 0; j < c; ++j) {
      const real e = std::exp(row[j] - mx);
      probs[static_cast<size_t>(b) * c + j] = e;
      sum += e;
    }
    for (int j = 0; j < c; ++j) probs[static_cast<size_t>(b) * c + j] /= sum;
    loss += std::log(sum) + mx - row[labels[static_cast<size_t>(b)]];
  }
  loss /= bsz;
  return make_op(
      {1}, {loss}, {logits},
      [labels, bsz, c, probs = std::move(probs)](TensorImpl& o) {
        TensorImpl& pl = parent(o, 0);
        if (!wants(pl)) return;
        pl.ensure_grad();
        const real g = o.grad[0] / static_cast<real>(bsz);
        for (int b = 0; b < bsz; ++b) {
          for (int j = 0; j < c; ++j) {
            const size_t idx = static_cast<size_t>(b) * c + j;
            const real onehot = (j == labels[static_cast<size_t>(b)]) ? real(1) : real(0);
            pl.grad[idx] += g * (probs[idx] - onehot);
          }
        }
      },
      "cross_entropy");
}

Tensor cosine_rows(const Tensor& x, const Tensor& k) {
  if (k.rank() != 1) throw std::invalid_argument("cosine_rows: k must be 1-D");
  const int d = k.dim(0);
  if (x.dim(-1) != d) {
    throw std::invalid_argument("cosine_rows: last axis of " + shape_str(x.shape()) +
                                " must equal " + std::to_string(d));
  }
  const long long rows = x.size() / d;
  const real* xv = x.values().data();
  const real* kv = k.values().data();
  real nk2 = 0;
  for (int j = 0; j < d; ++j) nk2 += kv[j] * kv[j];
  const real nk = std::sqrt(nk2);

  std::vector<int> out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<real> out(static_cast<size_t>(rows), real(0));
  std::vector<real> row_norm(static_cast<size_t>(rows), real(0));
  for (long long r = 0; r < rows; ++r) {
    const real* row = xv + r * d;
    real nx2 = 0, dot = 0;
    for (int j = 0; j < d; ++j) {
      nx2 += row[j] * row[j];
      dot += row[j] * kv[j];
    }
    const real nx = std::sqrt(nx2);
    row_norm[static_cast<size_t>(r)] = nx;
    if (nx >= kNormFloor && nk >= kNormFloor) out[static_cast<size_t>(r)] = dot / (nx * nk);
  }
  std::vector<real> cos_vals = out;
  return make_op(
      std::move(out_shape), std::move(out), {x, k},
      [d, rows, nk, cos_vals = std::move(cos_vals), row_norm = std::move(row_norm)](TensorImpl& o) {
        TensorImpl& px = parent(o, 0);
        TensorImpl& pk = parent(o, 1);
        if (wants(px)) px.ensure_grad();
        if (wants(pk)) pk.ensure_grad();
        if (nk < kNormFloor) return;
        for (long long r = 0; r < rows; ++r) {
          const real nx = row_norm[static_cast<size_t>(r)];
          if (nx < kNormFloor) continue;
          const real g = o.grad[static_cast<size_t>(r)];
          if (g == real(0)) continue;
          const real cosv = cos_vals[static_cast<size_t>(r)];
          const real* row = px.data.data() + r * d;
          const real* kd = pk.data.data();
          const real inv_xk = real(1) / (nx * nk);
          if (wants(px)) {
            real* gx = px.grad.data() + r * d;
            const real inv_x2 = real(1) / (nx * nx);
            for (int j = 0; j < d; ++j) gx[j] += g * (kd[j] * inv_xk - cosv * row[j] * inv_x2);
          }
          if (wants(pk)) {
            real* gk = pk.grad.data();
            const real inv_k2 = real(1) / (nk * nk);
            for (int j = 0; j < d; ++j) gk[j] += g * (row[j] * inv_xk - cosv * kd[j] * inv_k2);
          }
        }
      },
      "cosine_rows");
}

Tensor frobenius_norm(const Tensor& x) {
  real ss = 0;
  for (real v : x.values()) ss += v * v;
  const real n = std::sqrt(ss);
  return make_op(
      {1}, {n}, {x},
      [n](TensorImpl& o) {
        TensorImpl& px = parent(o, 0);
        if (!wants(px)) return;
        if (n < real(1e-30)) return;  // subgradient 0 at the origin
        px.ensure_grad();
        const real g = o.grad[0] / n;
        for (size_t i = 0; i < px.grad.size(); ++i) px.grad[i] += g * px.data[i];
      },
      "frobenius_norm");
}

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt,
                           double eps, double tol) {
  if (eps <= 0) throw std::invalid_argument("grad_check: eps must be positive");
  for (const Tensor& t : wrt) t.impl()->grad.clear();
  Tensor out = f();
  if (out.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  out.backward();

  std::vector<std::vector<real>> analytic;
  analytic.reserve(wrt.size());
  for (const Tensor& t : wrt) {
    analytic.push_back(t.has_grad() ? t.grad() : std::vector<real>(t.values().size(), real(0)));
  }

  GradCheckReport rep;
  NoGradGuard no_grad;
  for (size_t ti = 0; ti < wrt.size(); ++ti) {
    std::vector<real>& data = wrt[ti].impl()->data;
    for (size_t i = 0; i < data.size(); ++i) {
      const real saved = data[i];
      data[i] = saved + static_cast<real>(eps);
      const double up = static_cast<double>(f().scalar_value());
      data[i] = saved - static_cast<real>(eps);
      const double dn = static_cast<double>(f().scalar_value());
      data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(dn)) {
        throw std::runtime_error("grad_check: non-finite value during finite differencing");
      }
      const double numeric = (up - dn) / (2.0 * eps);
      const double a = static_cast<double>(analytic[ti][i]);
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      rep.max_rel_err = std::max(rep.max_rel_err, std::abs(a - numeric) / denom);
      ++rep.coords;
    }
  }
  rep.passed = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace cle
