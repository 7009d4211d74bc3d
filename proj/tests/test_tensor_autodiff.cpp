#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dseb/adam.hpp"
#include "dseb/autodiff.hpp"
#include "dseb/rng.hpp"
#include "dseb/tensor.hpp"
#include "test_helpers.hpp"

using namespace dseb;
using Catch::Approx;

TEST_CASE("matmul basics") {
  SECTION("identity times x is x") {
    const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const Tensor x = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    const Tensor out = matmul(eye, x);
    REQUIRE(out.raw() == x.raw());
  }
  SECTION("hand arithmetic") {
    const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    const Tensor b = Tensor::matrix(2, 1, {1, 1});
    const Tensor out = matmul(a, b);
    REQUIRE(out.at(0, 0) == 3.0);
    REQUIRE(out.at(1, 0) == 7.0);
  }
  SECTION("shape mismatch names both shapes") {
    ad::Tape tape;
    ad::Var a = tape.input(Tensor::zeros(2, 3));
    ad::Var b = tape.input(Tensor::zeros(2, 3));
    REQUIRE_THROWS_WITH(tape.matmul(a, b),
                        Catch::Matchers::ContainsSubstring("(2x3)") &&
                            Catch::Matchers::ContainsSubstring("inner"));
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(7);
  Tensor a = test::random_matrix(3, 4, rng);
  Tensor b = test::random_matrix(4, 2, rng);
  ad::Tape tape;
  ad::Var va = tape.input(a);
  ad::Var vb = tape.input(b);
  ad::Var loss = tape.sum(tape.matmul(va, vb));
  tape.backward(loss);
  const Tensor ga = tape.grad(va);
  auto loss_fn = [&]() {
    ad::Tape t;
    return t.value(t.sum(t.matmul(t.input(a), t.input(b)))).item();
  };
  REQUIRE(test::finite_difference_check(a, ga, loss_fn) < 1e-6);
}

TEST_CASE("softmax cross entropy examples") {
  SECTION("uniform logits give log(c)") {
    ad::Tape tape;
    ad::Var logits = tape.input(Tensor::matrix(1, 3, {0.7, 0.7, 0.7}));
    ad::Var loss = tape.softmax_cross_entropy(logits, {1}, {1, 1, 1});
    REQUIRE(tape.value(loss).item() == Approx(std::log(3.0)).epsilon(1e-12));
  }
  SECTION("saturated true class has near-zero loss") {
    ad::Tape tape;
    ad::Var logits = tape.input(Tensor::matrix(1, 3, {20.0, 0.0, 0.0}));
    ad::Var loss = tape.softmax_cross_entropy(logits, {0}, {1, 1, 1});
    REQUIRE(tape.value(loss).item() < 1e-8);
  }
  SECTION("weighted batch matches the direct formula") {
    Rng rng(11);
    Tensor logits = test::random_matrix(5, 3, rng);
    const std::vector<int> labels = {0, 2, 1, 1, 0};
    const std::vector<double> weights = {1.0, 2.0, 4.0};
    ad::Tape tape;
    ad::Var vl = tape.input(logits);
    ad::Var loss = tape.softmax_cross_entropy(vl, labels, weights);

    double expected = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      double denom = 0.0;
      for (std::size_t j = 0; j < 3; ++j) denom += std::exp(logits.at(i, j));
      const double w = weights[static_cast<std::size_t>(labels[i])];
      expected += w * -std::log(std::exp(logits.at(i, static_cast<std::size_t>(
                                                          labels[i]))) /
                                denom);
      wsum += w;
    }
    expected /= wsum;
    REQUIRE(test::max_rel_error(tape.value(loss).item(), expected) < 1e-12);

    tape.backward(loss);
    const Tensor g = tape.grad(vl);
    auto loss_fn = [&]() {
      ad::Tape t;
      return t.value(t.softmax_cross_entropy(t.input(logits), labels, weights))
          .item();
    };
    REQUIRE(test::finite_difference_check(logits, g, loss_fn) < 1e-6);
  }
  SECTION("label out of range is an error") {
    ad::Tape tape;
    ad::Var logits = tape.input(Tensor::zeros(2, 3));
    REQUIRE_THROWS_AS(tape.softmax_cross_entropy(logits, {0, 3}, {1, 1, 1}),
                      std::invalid_argument);
  }
  SECTION("invariant to a constant shift per row") {
    Rng rng(13);
    Tensor logits = test::random_matrix(4, 5, rng);
    const std::vector<int> labels = {4, 0, 2, 3};
    const std::vector<double> weights = {1, 1, 1, 1, 1};
    ad::Tape t1;
    const double base =
        t1.value(t1.softmax_cross_entropy(t1.input(logits), labels, weights))
            .item();
    Tensor shifted = logits;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 5; ++c) shifted.at(r, c) += 17.25;
    ad::Tape t2;
    const double moved =
        t2.value(t2.softmax_cross_entropy(t2.input(shifted), labels, weights))
            .item();
    REQUIRE(std::abs(base - moved) < 1e-12);
  }
}

TEST_CASE("l2 normalize and cosine") {
  SECTION("cosine of identical unit vectors") {
    REQUIRE(ad::cosine_similarity({1, 0}, {1, 0}) == 1.0);
  }
  SECTION("orthogonal vectors") {
    REQUIRE(ad::cosine_similarity({1, 0}, {0, 1}) == 0.0);
  }
  SECTION("hand formula") {
    REQUIRE(ad::cosine_similarity({1, 2, 3}, {-1, 0, 1}) ==
            Approx(2.0 / (std::sqrt(14.0) * std::sqrt(2.0))).epsilon(1e-12));
  }
  SECTION("zero vector is degenerate") {
    REQUIRE_THROWS_WITH(ad::cosine_similarity({0, 0}, {1, 0}),
                        Catch::Matchers::ContainsSubstring("degenerate"));
  }
  SECTION("l2_normalize is idempotent") {
    Rng rng(3);
    Tensor x = test::random_matrix(4, 6, rng);
    ad::Tape tape;
    ad::Var once = tape.l2_normalize_rows(tape.input(x));
    ad::Var twice = tape.l2_normalize_rows(once);
    const Tensor& a = tape.value(once);
    const Tensor& b = tape.value(twice);
    for (std::size_t i = 0; i < a.size(); ++i)
      REQUIRE(std::abs(a[i] - b[i]) < 1e-12);
  }
  SECTION("rows become unit norm, gradient is tangent") {
    Rng rng(5);
    Tensor x = test::random_matrix(3, 4, rng);
    ad::Tape tape;
    ad::Var vx = tape.input(x);
    ad::Var y = tape.l2_normalize_rows(vx);
    for (std::size_t r = 0; r < 3; ++r) {
      double norm = 0.0;
      for (std::size_t c = 0; c < 4; ++c)
        norm += tape.value(y).at(r, c) * tape.value(y).at(r, c);
      REQUIRE(std::sqrt(norm) == Approx(1.0).epsilon(1e-12));
    }
    ad::Var loss = tape.sum(tape.mul(y, y));
    tape.backward(loss);
    auto loss_fn = [&]() {
      ad::Tape t;
      ad::Var n = t.l2_normalize_rows(t.input(x));
      return t.value(t.sum(t.mul(n, n))).item();
    };
    REQUIRE(test::finite_difference_check(x, tape.grad(vx), loss_fn) < 1e-4);
  }
}

TEST_CASE("gradient reversal semantics") {
  Rng rng(17);
  Tensor x = test::random_matrix(2, 3, rng);
  SECTION("forward is bit-exact identity") {
    ad::Tape tape;
    ad::Var vx = tape.input(x);
    ad::Var y = tape.grl(vx, 2.5);
    REQUIRE(tape.value(y).raw() == x.raw());
  }
  SECTION("backward scales by -lambda exactly") {
    for (double lambda : {0.0, 0.2, 1.0, 2.5, 5.0}) {
      ad::Tape tape;
      ad::Var vx = tape.input(x);
      ad::Var loss = tape.sum(tape.grl(vx, lambda));
      tape.backward(loss);
      const Tensor& g = tape.grad(vx);
      for (std::size_t i = 0; i < g.size(); ++i)
        REQUIRE(g[i] == -lambda * 1.0);
    }
  }
  SECTION("negative lambda rejected") {
    ad::Tape tape;
    ad::Var vx = tape.input(x);
    REQUIRE_THROWS_AS(tape.grl(vx, -0.1), std::invalid_argument);
  }
}

TEST_CASE("backward basics") {
  SECTION("loss = sum(x) gives all-ones gradient") {
    ad::Tape tape;
    ad::Var x = tape.input(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    tape.backward(tape.sum(x));
    for (double g : tape.grad(x).raw()) REQUIRE(g == 1.0);
  }
  SECTION("loss = <x,x> gives 2x") {
    Tensor x0 = Tensor::matrix(1, 3, {1.5, -2.0, 0.25});
    ad::Tape tape;
    ad::Var x = tape.input(x0);
    tape.backward(tape.sum(tape.mul(x, x)));
    const Tensor& g = tape.grad(x);
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(g[i] == 2.0 * x0[i]);
  }
  SECTION("non-scalar loss is an error") {
    ad::Tape tape;
    ad::Var x = tape.input(Tensor::zeros(2, 2));
    REQUIRE_THROWS_AS(tape.backward(x), std::invalid_argument);
  }
}

TEST_CASE("mean/std pooling gradient") {
  Rng rng(23);
  Tensor x = test::random_matrix(5, 3, rng);
  ad::Tape tape;
  ad::Var vx = tape.input(x);
  ad::Var pooled = tape.mean_std_pool(vx);
  REQUIRE(tape.value(pooled).rows() == 1);
  REQUIRE(tape.value(pooled).cols() == 6);
  ad::Var loss = tape.sum(tape.mul(pooled, pooled));
  tape.backward(loss);
  auto loss_fn = [&]() {
    ad::Tape t;
    ad::Var p = t.mean_std_pool(t.input(x));
    return t.value(t.sum(t.mul(p, p))).item();
  };
  REQUIRE(test::finite_difference_check(x, tape.grad(vx), loss_fn) < 1e-4);
}

TEST_CASE("adam steps") {
  SECTION("zero gradient leaves parameters unchanged") {
    ParamSet params{{"w", Tensor::matrix(1, 2, {0.5, -0.25})}};
    GradSet grads{{"w", Tensor::zeros(1, 2)}};
    AdamState state;
    state.learning_rate = 0.001;
    adam_step(params, grads, state);
    REQUIRE(params["w"].raw() == std::vector<double>{0.5, -0.25});
    REQUIRE(state.step_count == 1);
  }
  SECTION("single unit-gradient step follows the update formula") {
    ParamSet params{{"w", Tensor::matrix(1, 1, {0.0})}};
    GradSet grads{{"w", Tensor::matrix(1, 1, {1.0})}};
    AdamState state;
    state.learning_rate = 0.001;
    adam_step(params, grads, state);
    // at t=1: m_hat = 1, v_hat = 1 -> update = -lr / (1 + eps)
    REQUIRE(params["w"].raw()[0] ==
            Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-15));
  }
  SECTION("two steps match a straight-line recomputation exactly") {
    Rng rng(31);
    Tensor w0 = test::random_matrix(2, 3, rng);
    Tensor g1 = test::random_matrix(2, 3, rng);
    Tensor g2 = test::random_matrix(2, 3, rng);
    ParamSet params{{"w", w0}};
    AdamState state;
    state.learning_rate = 0.01;
    adam_step(params, {{"w", g1}}, state);
    adam_step(params, {{"w", g2}}, state);

    // independent straight-line implementation of the same formula
    for (std::size_t i = 0; i < w0.size(); ++i) {
      double theta = w0[i], m = 0.0, v = 0.0;
      const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.01;
      const double gs[2] = {g1[i], g2[i]};
      for (int t = 1; t <= 2; ++t) {
        const double g = gs[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        theta -= lr * mhat / (std::sqrt(vhat) + eps);
      }
      REQUIRE(params["w"][i] == theta);
    }
  }
}

TEST_CASE("gradient clipping") {
  GradSet grads{{"a", Tensor::matrix(1, 2, {3.0, 4.0})}};
  SECTION("disabled by default") {
    clip_gradients(grads, 0.0);
    REQUIRE(grads["a"].raw() == std::vector<double>{3.0, 4.0});
  }
  SECTION("scales down to the max norm") {
    clip_gradients(grads, 1.0);
    const double norm = std::hypot(grads["a"][0], grads["a"][1]);
    REQUIRE(norm == Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("tape replay determinism") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = test::random_matrix(4, 3, rng);
    Tensor w = test::random_matrix(3, 2, rng);
    ad::Tape tape;
    ad::Var vx = tape.input(x);
    ad::Var vw = tape.input(w);
    ad::Var loss = tape.sum(tape.relu(tape.matmul(vx, vw)));
    tape.backward(loss);
    return std::make_pair(tape.value(loss).item(), tape.grad(vw).raw());
  };
  const auto [l1, g1] = run(99);
  const auto [l2, g2] = run(99);
  REQUIRE(l1 == l2);
  REQUIRE(g1 == g2);
}
