#include <doctest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "wecar/core/adam.hpp"
#include "wecar/core/errors.hpp"
#include "wecar/core/ops.hpp"
#include "wecar/core/tape.hpp"

using namespace wecar;
using core::Param;
using core::Tape;
using core::Tensor2;

TEST_SUITE("core") {
  TEST_CASE("softmax of equal logits is uniform") {
    Tape t(false);
    auto y = core::softmax_rows(t.constant(Tensor2{{0, 0, 0}}));
    for (std::size_t j = 0; j < 3; ++j) CHECK(y.value()(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("softmax rows are positive and sum to one") {
    core::Rng rng(3);
    Tape t(false);
    Tensor2 x = testing::random_matrix(5, 7, rng);
    for (auto& v : x.data()) v *= 20.0;
    auto y = core::softmax_rows(t.constant(x)).value();
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(y(r, c) > 0.0);
        s += y(r, c);
      }
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }

  TEST_CASE("identity matmul returns the operand") {
    core::Rng rng(1);
    for (std::size_t k : {1u, 2u, 5u}) {
      Tensor2 a = testing::random_matrix(3, k, rng);
      Tape t(false);
      auto y = core::matmul(t.constant(Tensor2::identity(3)), t.constant(a));
      CHECK(y.value() == a);
    }
  }

  TEST_CASE("mse of identical inputs is zero") {
    core::Rng rng(2);
    Tensor2 a = testing::random_matrix(3, 4, rng);
    Tape t(false);
    CHECK(core::mse(t.constant(a), t.constant(a)).value()[0] == 0.0);
  }

  TEST_CASE("shape mismatch names the op and the shapes") {
    Tape t(false);
    auto a = t.constant(Tensor2(2, 3));
    auto b = t.constant(Tensor2(2, 3));
    try {
      core::matmul(a, b);
      FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("matmul") != std::string::npos);
      CHECK(msg.find("2x3") != std::string::npos);
    }
    CHECK_THROWS_AS(core::add(a, t.constant(Tensor2(3, 2))), DimensionError);
    CHECK_THROWS_AS(core::mse(a, t.constant(Tensor2(1, 1))), DimensionError);
  }

  TEST_CASE("zero mask yields a zero gradient") {
    Param w("w", Tensor2{{1, 2}, {3, 4}});
    w.set_mask(Tensor2(2, 2, 0.0));
    Tape t;
    auto loss = core::sum_all(core::matmul(t.param(w), t.constant(Tensor2{{1}, {1}})));
    t.backward(loss);
    for (double g : w.grad.data()) CHECK(g == 0.0);
  }

  TEST_CASE("mse gradient at a=1 b=0 is 2") {
    Param a("a", Tensor2{{1}});
    Tape t;
    t.backward(core::mse(t.param(a), t.constant(Tensor2{{0}})));
    CHECK(a.grad[0] == 2.0);
  }

  TEST_CASE("non-trainable params keep a zero gradient") {
    Param a("a", Tensor2{{1, 2}});
    Param b("b", Tensor2{{3, 4}}, false);
    Tape t;
    t.backward(core::sum_all(core::add(t.param(a), t.param(b))));
    CHECK(a.grad == Tensor2{{1, 1}});
    CHECK(b.grad == Tensor2(1, 2));
  }

  TEST_CASE("backward without a recorded loss is a state error") {
    Tape t;
    CHECK_THROWS_AS(t.backward(core::Var{}), StateError);
    auto x = t.constant(Tensor2(2, 2));
    CHECK_THROWS_AS(t.backward(x), DimensionError);
  }

  TEST_CASE("finite differences agree on every op over 20 seeds") {
    for (const auto& c : testing::gradient_cases()) {
      for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto r = c.run(seed);
        INFO(c.name, " seed ", seed, " worst ", r.worst, " err ", r.max_rel_err);
        CHECK(r.ok());
      }
    }
  }

  TEST_CASE("adam leaves a zero-gradient param unchanged") {
    Param w("w", Tensor2{{0.5, -0.25}});
    w.grad = Tensor2(1, 2);
    w.has_grad = true;
    core::Adam adam;
    Param* ps[] = {&w};
    adam.step(ps);
    CHECK(w.value == Tensor2{{0.5, -0.25}});
  }

  TEST_CASE("adam skips masked entries") {
    Param w("w", Tensor2{{1, 2}, {3, 4}});
    w.set_mask(Tensor2{{1, 0}, {1, 1}});
    core::Adam adam;
    Param* ps[] = {&w};
    for (int s = 0; s < 5; ++s) {
      Tape t;
      t.backward(core::sum_all(t.param(w)));
      adam.step(ps);
    }
    CHECK(w.value(0, 1) == 2.0);
    CHECK(w.value(0, 0) < 1.0);
  }

  TEST_CASE("adam leaves non-trainable params bit-identical") {
    Param w("w", Tensor2{{1, 2}}, false);
    core::Adam adam;
    Param* ps[] = {&w};
    adam.step(ps);
    CHECK(w.value == Tensor2{{1, 2}});
  }

  TEST_CASE("adam without gradients is a state error") {
    Param w("w", Tensor2{{1}});
    core::Adam adam;
    Param* ps[] = {&w};
    CHECK_THROWS_AS(adam.step(ps), StateError);
  }

  TEST_CASE("one adam step matches the hand recurrence") {
    Param w("w", Tensor2{{1.0}});
    w.grad = Tensor2{{1.0}};
    w.has_grad = true;
    core::Adam adam;
    Param* ps[] = {&w};
    adam.step(ps);
    const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 1.0;
    const double m = (1 - b1) * g, v = (1 - b2) * g * g;
    const double mh = m / (1 - b1), vh = v / (1 - b2);
    const double expected = static_cast<float>(1.0 - lr * mh / (std::sqrt(vh) + eps));
    CHECK(w.value[0] < 1.0);
    CHECK(w.value[0] == expected);
    CHECK(adam.steps() == 1);
  }

  TEST_CASE("training is deterministic for a fixed seed") {
    auto run = [] {
      core::Rng rng(11);
      Param w("w", testing::random_matrix(3, 3, rng));
      const Tensor2 x = testing::random_matrix(4, 3, rng);
      const Tensor2 y = testing::random_matrix(4, 3, rng);
      core::Adam adam;
      Param* ps[] = {&w};
      for (int s = 0; s < 20; ++s) {
        Tape t;
        core::Rng drop(s);
        auto out = core::dropout(core::tanh(core::matmul(t.constant(x), t.param(w))), 0.1, drop);
        t.backward(core::mse(out, t.constant(y)));
        adam.step(ps);
      }
      return w.value;
    };
    CHECK(run() == run());
  }

  TEST_CASE("dropout is the identity at rate zero") {
    core::Rng rng(5);
    Tensor2 a = testing::random_matrix(3, 3, rng);
    Tape t(false);
    CHECK(core::dropout(t.constant(a), 0.0, rng).value() == a);
  }
}
