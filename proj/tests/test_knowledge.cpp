#include <doctest.h>

#include <cmath>

#include "cle/adapters.hpp"
#include "cle/knowledge.hpp"
#include "cle/rng.hpp"

using namespace cle;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  rng.fill_normal(t, 1.0);
  return t;
}

}  // namespace

TEST_SUITE_BEGIN("knowledge");

TEST_CASE("cross_att with a zero query yields a zero description") {
  Rng rng(3);
  Tensor h = random_tensor({4, 5, 6}, rng);
  Tensor q = Tensor::zeros({6});
  Tensor d = cross_att(h, q);
  CHECK(d.shape() == std::vector<int>{4, 6});
  for (real v : d.values()) CHECK(v == 0.0);
}

TEST_CASE("cross_att single-token closed form") {
  // S = 1: d = ((h . q) / sqrt(D)) * h
  Rng rng(5);
  Tensor h = random_tensor({2, 1, 4}, rng);
  Tensor q = random_tensor({4}, rng);
  Tensor d = cross_att(h, q);
  for (int b = 0; b < 2; ++b) {
    double dot = 0;
    for (int j = 0; j < 4; ++j) {
      dot += h.values()[static_cast<size_t>(b * 4 + j)] * q.values()[static_cast<size_t>(j)];
    }
    const double s = dot / 2.0;  // sqrt(4)
    for (int j = 0; j < 4; ++j) {
      CHECK(d.values()[static_cast<size_t>(b * 4 + j)] ==
            doctest::Approx(s * h.values()[static_cast<size_t>(b * 4 + j)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("cross_att matches the explicit double-loop oracle") {
  Rng rng(7);
  Tensor h = random_tensor({2, 3, 4}, rng);
  Tensor q = random_tensor({4}, rng);
  Tensor d = cross_att(h, q);
  const double inv_sqrt_d = 1.0 / 2.0;
  for (int b = 0; b < 2; ++b) {
    std::vector<double> want(4, 0.0);
    for (int s = 0; s < 3; ++s) {
      double score = 0;
      for (int j = 0; j < 4; ++j) {
        score += h.values()[static_cast<size_t>((b * 3 + s) * 4 + j)] *
                 q.values()[static_cast<size_t>(j)];
      }
      score *= inv_sqrt_d;
      for (int j = 0; j < 4; ++j) {
        want[static_cast<size_t>(j)] +=
            score * h.values()[static_cast<size_t>((b * 3 + s) * 4 + j)];
      }
    }
    for (int j = 0; j < 4; ++j) {
      CHECK(std::abs(d.values()[static_cast<size_t>(b * 4 + j)] - want[static_cast<size_t>(j)]) <=
            1e-12);
    }
  }
}

TEST_CASE("cross_att is scale covariant in the query") {
  Rng rng(11);
  Tensor h = random_tensor({3, 4, 5}, rng);
  Tensor q = random_tensor({5}, rng);
  const real c = real(-2.5);
  Tensor scaled_q = scale(q, c);
  Tensor d1 = cross_att(h, q);
  Tensor d2 = cross_att(h, scaled_q);
  for (size_t i = 0; i < d1.values().size(); ++i) {
    CHECK(d2.values()[i] == doctest::Approx(c * d1.values()[i]).epsilon(1e-10));
  }
}

TEST_CASE("coefficient endpoint values") {
  Tensor k = Tensor::from({3}, {0.5, 0.5, 0});
  Tensor d = Tensor::from({3, 3}, {1, 1, 0, 0, 0, 7, -2, -2, 0});
  Tensor c = coefficient(d, k);
  CHECK(c.values()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c.values()[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(c.values()[2] == doctest::Approx(-1.0).epsilon(1e-12));
  Tensor z = coefficient(Tensor::zeros({2, 3}), k);
  for (real v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("ortho_loss on orthonormal, scaled and single columns") {
  // orthonormal columns: exactly zero
  Tensor q = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(ortho_loss(q).scalar_value() < 1e-10);

  // X = 2 I2: ||diag(3,3)||_F = 3 sqrt(2)
  Tensor two_i = Tensor::from({2, 2}, {2, 0, 0, 2});
  CHECK(ortho_loss(two_i).scalar_value() ==
        doctest::Approx(3.0 * std::sqrt(2.0)).epsilon(1e-12));

  Tensor unit = Tensor::from({4, 1}, {0.5, 0.5, 0.5, 0.5});
  CHECK(ortho_loss(unit).scalar_value() < 1e-10);
}

TEST_CASE("ortho_loss is invariant under column permutation") {
  Rng rng(17);
  Tensor x = random_tensor({5, 3}, rng);
  // swap columns 0 and 2
  Tensor y = Tensor::zeros({5, 3});
  for (int r = 0; r < 5; ++r) {
    y.values_mut()[static_cast<size_t>(r * 3 + 0)] = x.values()[static_cast<size_t>(r * 3 + 2)];
    y.values_mut()[static_cast<size_t>(r * 3 + 1)] = x.values()[static_cast<size_t>(r * 3 + 1)];
    y.values_mut()[static_cast<size_t>(r * 3 + 2)] = x.values()[static_cast<size_t>(r * 3 + 0)];
  }
  CHECK(ortho_loss(x).scalar_value() ==
        doctest::Approx(ortho_loss(y).scalar_value()).epsilon(1e-12));
}

TEST_CASE("total_loss composition") {
  Tensor task = Tensor::scalar(1.25);
  // lambda = 0 returns the task loss untouched
  Tensor t0 = total_loss(task, {}, {}, 0.0);
  CHECK(t0.scalar_value() == 1.25);

  // orthonormal stacks keep the loss unchanged for any lambda
  Tensor ortho_stack = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor t1 = total_loss(task, {ortho_stack}, {ortho_stack}, 3.7);
  CHECK(t1.scalar_value() == doctest::Approx(1.25).epsilon(1e-12));

  // lambda = 0.1 with a known stack
  Tensor x = Tensor::from({2, 2}, {2, 0, 0, 2});
  const double hand = 3.0 * std::sqrt(2.0);
  Tensor t2 = total_loss(task, {x}, {}, 0.1);
  CHECK(t2.scalar_value() == doctest::Approx(1.25 + 0.1 * hand).epsilon(1e-12));

  CHECK_THROWS_AS(total_loss(task, {}, {}, -0.5), std::invalid_argument);
}

TEST_CASE("total_loss averages the penalty over insertion points") {
  Tensor task = Tensor::scalar(0.0);
  Tensor x = Tensor::from({2, 2}, {2, 0, 0, 2});
  const double hand = 3.0 * std::sqrt(2.0);
  // two insertion points with the same stack: mean equals the single value
  Tensor t = total_loss(task, {x, x}, {}, 1.0);
  CHECK(t.scalar_value() == doctest::Approx(hand).epsilon(1e-12));
}

TEST_CASE("gradients flow only into trainable columns") {
  Rng rng(23);
  Tensor frozen_col = random_tensor({4}, rng, false);
  Tensor live_col = random_tensor({4}, rng, true);
  TaskQuerySet qs;
  qs.task_id = 0;
  qs.mode = FusionMode::kAdapterLevel;
  qs.columns.push_back(QueryColumn{{frozen_col}});
  qs.columns.push_back(QueryColumn{{live_col}});
  Tensor total = total_loss(Tensor::scalar(0.0), query_stacks(qs), {}, 0.5);
  total.backward();
  CHECK_FALSE(frozen_col.has_grad());
  CHECK(live_col.has_grad());
}

TEST_CASE("ortho_loss gradient matches finite differences") {
  Rng rng(29);
  Tensor x = random_tensor({3, 3}, rng, true);
  auto rep = grad_check([&] { return ortho_loss(x); }, {x}, 1e-5, 1e-5);
  CHECK(rep.passed);
}

TEST_CASE("query columns pinned to zero give identically zero coefficients") {
  Rng rng(31);
  Tensor h = random_tensor({3, 4, 8}, rng);
  AdapterBank bank(8, 1);
  bank.add_adapter(0, 2, 3);
  bank.add_adapter(1, 2, 3);
  // give adapter deltas real content
  for (int i = 0; i < 2; ++i) rng.fill_normal(bank.adapters[static_cast<size_t>(i)].at[0].up, 0.3);

  Tensor zero_q = Tensor::zeros({8});
  Tensor live_q = random_tensor({8}, rng);
  Tensor a0 = coefficient(cross_att(h, zero_q), bank.keys[0].per_point[0]);
  Tensor a1 = coefficient(cross_att(h, live_q), bank.keys[1].per_point[0]);
  for (real v : a0.values()) CHECK(v == 0.0);
  // fused output is then independent of adapter 0
  Tensor with_both = fuse({bank.delta(0, 0, h), bank.delta(1, 0, h)}, {a0, a1},
                          FusionMode::kAdapterLevel);
  Tensor only_second = fuse({bank.delta(1, 0, h)}, {a1}, FusionMode::kAdapterLevel);
  for (size_t i = 0; i < with_both.values().size(); ++i) {
    CHECK(with_both.values()[i] == only_second.values()[i]);
  }
}

TEST_CASE("end-to-end gradient through cross_att, coefficient and fuse") {
  Rng rng(37);
  Tensor h = random_tensor({2, 3, 6}, rng, true);
  Tensor q = random_tensor({6}, rng, true);
  Tensor k = random_tensor({6}, rng, true);
  Tensor delta = random_tensor({2, 3, 6}, rng, true);
  auto f = [&] {
    Tensor alpha = coefficient(cross_att(h, q), k);
    Tensor fused = fuse({delta}, {alpha}, FusionMode::kAdapterLevel);
    return mean_all(mul(fused, fused));
  };
  auto rep = grad_check(f, {h, q, k, delta}, 1e-5, 1e-4);
  CHECK(rep.passed);
}

TEST_SUITE_END();
