#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "cle/ops.hpp"
#include "cle/rng.hpp"
#include "cle/tensor.hpp"

using namespace cle;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = true,
                     double stdev = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  rng.fill_normal(t, stdev);
  return t;
}

// generic scalar functional of an op output, to drive grad_check
Tensor squared_sum(const Tensor& t) { return sum_all(mul(t, t)); }

constexpr double kGradTol = sizeof(real) == 8 ? 1e-6 : 1e-4;

}  // namespace

TEST_SUITE_BEGIN("numerics");

TEST_CASE("matmul identity and hand-computed cases") {
  Tensor i2 = Tensor::identity(2);
  Tensor prod = matmul(i2, i2);
  CHECK(prod.values() == i2.values());

  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {0, 1});
  Tensor c = matmul(a, b);
  CHECK(c.shape() == std::vector<int>{2, 1});
  CHECK(c.values()[0] == doctest::Approx(2));
  CHECK(c.values()[1] == doctest::Approx(4));

  Tensor z = Tensor::zeros({2, 3});
  Tensor az = matmul(a, Tensor::zeros({2, 3}));
  for (real v : az.values()) CHECK(v == 0);
  CHECK(az.shape() == z.shape());
}

TEST_CASE("matmul shape errors") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(matmul(Tensor::zeros({3}), a), std::invalid_argument);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3, 4})),
                  std::invalid_argument);
}

TEST_CASE("batched matmul matches per-slice products") {
  Rng rng(7);
  Tensor a = random_tensor({3, 2, 4}, rng, false);
  Tensor b = random_tensor({3, 4, 5}, rng, false);
  Tensor c = matmul(a, b);
  CHECK(c.shape() == std::vector<int>{3, 2, 5});
  for (int s = 0; s < 3; ++s) {
    Tensor as = Tensor::from({2, 4}, std::vector<real>(a.values().begin() + s * 8,
                                                       a.values().begin() + (s + 1) * 8));
    Tensor bs = Tensor::from({4, 5}, std::vector<real>(b.values().begin() + s * 20,
                                                       b.values().begin() + (s + 1) * 20));
    Tensor cs = matmul(as, bs);
    for (int i = 0; i < 10; ++i) {
      CHECK(c.values()[s * 10 + i] == doctest::Approx(cs.values()[i]).epsilon(1e-12));
    }
  }
  // shared rhs broadcast across batches
  Tensor w = random_tensor({4, 5}, rng, false);
  Tensor cb = matmul(a, w);
  for (int s = 0; s < 3; ++s) {
    Tensor as = Tensor::from({2, 4}, std::vector<real>(a.values().begin() + s * 8,
                                                       a.values().begin() + (s + 1) * 8));
    Tensor cs = matmul(as, w);
    for (int i = 0; i < 10; ++i) {
      CHECK(cb.values()[s * 10 + i] == doctest::Approx(cs.values()[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax examples") {
  Tensor t = softmax(Tensor::from({2}, {0, 0}), -1);
  CHECK(t.values()[0] == doctest::Approx(0.5));
  CHECK(t.values()[1] == doctest::Approx(0.5));

  // scalar exp/sum oracle for [1, 2]
  Tensor s = softmax(Tensor::from({2}, {1, 2}), 0);
  const double e1 = std::exp(1.0), e2 = std::exp(2.0);
  CHECK(s.values()[0] == doctest::Approx(e1 / (e1 + e2)).epsilon(1e-12));
  CHECK(s.values()[1] == doctest::Approx(e2 / (e1 + e2)).epsilon(1e-12));

  Tensor one = softmax(Tensor::from({1}, {3.7}), 0);
  CHECK(one.values()[0] == doctest::Approx(1.0));

  CHECK_THROWS_AS(softmax(Tensor::zeros({2, 2}), 5), std::invalid_argument);
}

TEST_CASE("softmax properties: positivity, normalization, shift invariance") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({3, 5}, rng, false, 3.0);
    Tensor s = softmax(x, 1);
    for (real v : s.values()) CHECK(v > 0);
    for (int r = 0; r < 3; ++r) {
      real sum = 0;
      for (int j = 0; j < 5; ++j) sum += s.values()[r * 5 + j];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    const real c = static_cast<real>(rng.normal(0, 10));
    Tensor shifted = softmax(add(x, Tensor::full({3, 5}, c)), 1);
    for (size_t i = 0; i < s.values().size(); ++i) {
      CHECK(shifted.values()[i] == doctest::Approx(s.values()[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("cross_entropy examples") {
  // uniform logits, C = 4 -> ln 4
  Tensor ce = cross_entropy(Tensor::zeros({2, 4}), {1, 3});
  CHECK(ce.scalar_value() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // confident one-hot logits -> ~0
  Tensor logits = Tensor::from({1, 3}, {30, 0, 0});
  CHECK(cross_entropy(logits, {0}).scalar_value() == doctest::Approx(0.0).epsilon(1e-9));

  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({2, 3}), {0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({2, 3}), {-1, 0}), std::invalid_argument);
}

TEST_CASE("cross_entropy matches per-sample log-sum-exp oracle") {
  Rng rng(23);
  Tensor logits = random_tensor({3, 5}, rng, false, 2.0);
  std::vector<int> labels = {4, 0, 2};
  double expect = 0;
  for (int b = 0; b < 3; ++b) {
    double lse = 0;
    for (int j = 0; j < 5; ++j) lse += std::exp(static_cast<double>(logits.values()[b * 5 + j]));
    expect += std::log(lse) - static_cast<double>(logits.values()[b * 5 + labels[b]]);
  }
  expect /= 3.0;
  CHECK(cross_entropy(logits, labels).scalar_value() == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("grad_check on sum of squares has analytic gradient") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  auto f = [&] { return squared_sum(x); };
  auto rep = grad_check(f, {x}, 1e-5, 1e-6);
  CHECK(rep.passed);
  CHECK(rep.max_rel_err <= 1e-6);
  Tensor out = f();
  x.zero_grad();
  out.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("grad_check rejects bad eps and non-finite functions") {
  Tensor x = Tensor::from({1}, {1}, true);
  CHECK_THROWS_AS(grad_check([&] { return x; }, {x}, 0.0, 1e-6), std::invalid_argument);
  CHECK_THROWS_AS(scale(scale(Tensor::full({2}, real(1e200)), real(1e200)), real(1e200)),
                  std::runtime_error);
}

TEST_CASE("every primitive passes grad_check over random shapes") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(99, "gradcheck", seed));
    const int m = 2 + rng.below(3), k = 2 + rng.below(3), n = 2 + rng.below(3);
    const int batch = 1 + rng.below(3);

    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    CHECK(grad_check([&] { return squared_sum(matmul(a, b)); }, {a, b}, 1e-5, kGradTol).passed);

    Tensor ab = random_tensor({batch, m, k}, rng);
    Tensor bb = random_tensor({batch, k, n}, rng);
    CHECK(grad_check([&] { return squared_sum(matmul(ab, bb)); }, {ab, bb}, 1e-5, kGradTol).passed);
    CHECK(grad_check([&] { return squared_sum(matmul(ab, b)); }, {ab, b}, 1e-5, kGradTol).passed);
    CHECK(grad_check([&] { return squared_sum(matmul(a, bb)); }, {a, bb}, 1e-5, kGradTol).passed);

    Tensor x3 = random_tensor({batch, m, k}, rng);
    CHECK(grad_check([&] { return squared_sum(transpose(x3)); }, {x3}, 1e-5, kGradTol).passed);
    CHECK(grad_check([&] { return squared_sum(permute(x3, {2, 0, 1})); }, {x3}, 1e-5, kGradTol)
              .passed);
    CHECK(grad_check([&] { return squared_sum(reshape(x3, {m * k, batch})); }, {x3}, 1e-5, kGradTol)
              .passed);

    Tensor u = random_tensor({m, n}, rng);
    Tensor v = random_tensor({m, n}, rng);
    CHECK(grad_check([&] { return squared_sum(add(u, v)); }, {u, v}, 1e-5, kGradTol).passed);
    CHECK(grad_check([&] { return squared_sum(sub(u, v)); }, {u, v}, 1e-5, kGradTol).passed);
    CHECK(grad_check([&] { return squared_sum(mul(u, v)); }, {u, v}, 1e-5, kGradTol).passed);
    CHECK(grad_check([&] { return squared_sum(scale(u, real(-1.7))); }, {u}, 1e-5, kGradTol).passed);

    Tensor bias = random_tensor({n}, rng);
    Tensor bias3 = random_tensor({k}, rng, false);
    CHECK(grad_check([&] { return squared_sum(add_bias(x3, bias3)); }, {x3}, 1e-5, kGradTol)
              .passed);
    CHECK(grad_check([&] { return squared_sum(add_bias(u, bias)); }, {u, bias}, 1e-5, kGradTol)
              .passed);
    Tensor rowscale = random_tensor({batch, m}, rng);
    CHECK(grad_check([&] { return squared_sum(scale_rows(x3, rowscale)); }, {x3, rowscale}, 1e-5,
                     kGradTol)
              .passed);

    CHECK(grad_check([&] { return squared_sum(softmax(u, 1)); }, {u}, 1e-5, kGradTol).passed);
    CHECK(grad_check([&] { return squared_sum(softmax(x3, 0)); }, {x3}, 1e-5, kGradTol).passed);
    CHECK(grad_check([&] { return squared_sum(gelu(u)); }, {u}, 1e-5, kGradTol).passed);

    Tensor gamma = random_tensor({k}, rng);
    Tensor beta = random_tensor({k}, rng);
    CHECK(grad_check([&] { return squared_sum(layer_norm(x3, gamma, beta)); }, {x3, gamma, beta},
                     1e-5, 1e-5)
              .passed);

    Tensor table = random_tensor({5, k}, rng);
    std::vector<int> ids;
    for (int i = 0; i < batch * m; ++i) ids.push_back(rng.below(5));
    CHECK(grad_check([&] { return squared_sum(embedding(table, ids, {batch, m})); }, {table}, 1e-5,
                     kGradTol)
              .passed);

    Tensor c1 = random_tensor({m, 2, n}, rng);
    Tensor c2 = random_tensor({m, 3, n}, rng);
    CHECK(grad_check([&] { return squared_sum(concat({c1, c2}, 1)); }, {c1, c2}, 1e-5, kGradTol)
              .passed);
    CHECK(grad_check([&] { return squared_sum(slice(c2, 1, 1, 2)); }, {c2}, 1e-5, kGradTol).passed);
    CHECK(grad_check([&] { return squared_sum(select(c2, 1, 2)); }, {c2}, 1e-5, kGradTol).passed);
    CHECK(grad_check([&] { return squared_sum(mean_pool(c2, 1)); }, {c2}, 1e-5, kGradTol).passed);
    CHECK(grad_check([&] { return mean_all(mul(u, u)); }, {u}, 1e-5, kGradTol).passed);

    std::vector<int> labels;
    for (int i = 0; i < m; ++i) labels.push_back(rng.below(n));
    CHECK(grad_check([&] { return cross_entropy(u, labels); }, {u}, 1e-5, kGradTol).passed);

    Tensor d = random_tensor({batch, k}, rng);
    Tensor key = random_tensor({k}, rng);
    CHECK(grad_check([&] { return squared_sum(cosine_rows(d, key)); }, {d, key}, 1e-5, 1e-5).passed);
    CHECK(grad_check([&] { return frobenius_norm(u); }, {u}, 1e-5, kGradTol).passed);
  }
}

TEST_CASE("backward is linear in the loss combination") {
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor({4, 3}, rng);
    const real ca = static_cast<real>(rng.normal()), cb = static_cast<real>(rng.normal());

    auto grad_of = [&](const std::function<Tensor()>& f) {
      x.zero_grad();
      f().backward();
      return x.grad();
    };
    auto f = [&] { return squared_sum(x); };
    auto g = [&] { return sum_all(gelu(x)); };
    auto combined = [&] { return add(scale(f(), ca), scale(g(), cb)); };

    auto gf = grad_of(f);
    auto gg = grad_of(g);
    auto gc = grad_of(combined);
    for (size_t i = 0; i < gc.size(); ++i) {
      CHECK(gc[i] == doctest::Approx(ca * gf[i] + cb * gg[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("identical seed gives bit-identical results") {
  auto run = [] {
    Rng rng(1234);
    Tensor a = random_tensor({4, 4}, rng, false);
    Tensor b = random_tensor({4, 4}, rng, false);
    return softmax(matmul(gelu(a), b), -1).values();
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(real)) == 0);
}

TEST_CASE("tape rejects a second traversal without rebuild") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor loss = squared_sum(x);
  loss.backward();
  CHECK_THROWS_AS(loss.backward(), std::runtime_error);
  // rebuilding the graph re-enables backward
  Tensor loss2 = squared_sum(x);
  CHECK_NOTHROW(loss2.backward());
}

TEST_CASE("backward requires a scalar root") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(y.backward(), std::invalid_argument);
}

TEST_CASE("tensor invariants: shape/data agreement and finiteness") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::from({1}, {std::numeric_limits<real>::quiet_NaN()}),
                  std::runtime_error);
  CHECK_THROWS_AS(Tensor::from({1}, {std::numeric_limits<real>::infinity()}), std::runtime_error);
}

TEST_CASE("cosine_rows conventions") {
  Tensor k = Tensor::from({3}, {1, 0, 0});
  Tensor d = Tensor::from({3, 3}, {2, 0, 0, 0, 5, 0, -3, 0, 0});
  Tensor c = cosine_rows(d, k);
  CHECK(c.values()[0] == doctest::Approx(1.0));
  CHECK(c.values()[1] == doctest::Approx(0.0));
  CHECK(c.values()[2] == doctest::Approx(-1.0));

  // zero-norm rows and zero keys give exactly 0
  Tensor dz = cosine_rows(Tensor::zeros({2, 3}), k);
  CHECK(dz.values()[0] == 0.0);
  Tensor kz = cosine_rows(d, Tensor::zeros({3}));
  for (real v : kz.values()) CHECK(v == 0.0);
}

TEST_CASE("cosine magnitude never exceeds one") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor d = random_tensor({4, 6}, rng, false, 3.0);
    Tensor k = random_tensor({6}, rng, false, 3.0);
    Tensor c = cosine_rows(d, k);
    for (real v : c.values()) CHECK(std::abs(v) <= real(1) + real(1e-12));
  }
}

TEST_SUITE_END();
