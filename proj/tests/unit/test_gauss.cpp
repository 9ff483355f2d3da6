#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "wecar/core/errors.hpp"
#include "wecar/core/ops.hpp"
#include "wecar/model/gauss_encoding.hpp"

using namespace wecar;
using core::Tensor2;
using model::GaussianRangeEncoding;

namespace {

GaussianRangeEncoding make_enc(std::size_t n, std::size_t d, std::size_t g, std::uint64_t seed) {
  core::Rng rng(seed);
  auto enc = GaussianRangeEncoding::create(n, d, g, 2.0, rng);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t j = 0; j < g; ++j) {
    enc.mu.value[j] = 1.0 + static_cast<double>(n) * (j + 0.5) / g + u(rng);
    enc.sigma_raw.value[j] = 1.0 + u(rng);
  }
  return enc;
}

double sigma_of(const GaussianRangeEncoding& e, std::size_t j) {
  return std::log1p(std::exp(e.sigma_raw.value[j])) + GaussianRangeEncoding::kSigmaFloor;
}

}  // namespace

TEST_SUITE("gauss") {
  TEST_CASE("log-weight peaks at zero for unit width") {
    auto enc = make_enc(5, 2, 1, 1);
    enc.mu.value[0] = 3.0;
    enc.set_sigma(0, 1.0);
    auto b = enc.compute_b(5);
    CHECK(std::abs(b(2, 0)) < 1e-12);   // position 3
    CHECK(b(4, 0) == doctest::Approx(-2.0).epsilon(1e-12));  // position 5, two away
  }

  TEST_CASE("log-weights match a per-cell evaluation") {
    auto enc = make_enc(5, 4, 3, 7);
    auto b = enc.compute_b(5);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        const double s = sigma_of(enc, j);
        const double diff = static_cast<double>(i + 1) - enc.mu.value[j];
        CHECK(b(i, j) == doctest::Approx(-diff * diff / (2 * s * s) - std::log(s)).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("single range gives unit weights") {
    auto enc = make_enc(6, 3, 1, 2);
    auto beta = enc.compute_beta(6);
    for (double v : beta.data()) CHECK(v == 1.0);
  }

  TEST_CASE("symmetric ranges split evenly") {
    auto enc = make_enc(9, 2, 2, 3);
    enc.mu.value[0] = 5.0 - 2.0;
    enc.mu.value[1] = 5.0 + 2.0;
    enc.set_sigma(0, 1.5);
    enc.set_sigma(1, 1.5);
    auto beta = enc.compute_beta(9);
    CHECK(beta(4, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(beta(4, 1) == doctest::Approx(0.5).epsilon(1e-12));
  }

  TEST_CASE("weights match a per-row softmax") {
    auto enc = make_enc(7, 4, 3, 11);
    auto b = enc.compute_b(7);
    auto beta = enc.compute_beta(7);
    for (std::size_t i = 0; i < 7; ++i) {
      double mx = -INFINITY, z = 0.0, sum = 0.0;
      for (std::size_t j = 0; j < 3; ++j) mx = std::max(mx, b(i, j));
      for (std::size_t j = 0; j < 3; ++j) z += std::exp(b(i, j) - mx);
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(beta(i, j) == doctest::Approx(std::exp(b(i, j) - mx) / z).epsilon(1e-12));
        sum += beta(i, j);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
  }

  TEST_CASE("zero table leaves the input unchanged") {
    auto enc = make_enc(4, 3, 2, 4);
    enc.table.value.fill(0.0);
    core::Rng rng(1);
    Tensor2 x = testing::random_matrix(4, 3, rng);
    CHECK(enc.encode(x) == x);
  }

  TEST_CASE("zero input with one range repeats the table row") {
    auto enc = make_enc(4, 3, 1, 5);
    auto out = enc.encode(Tensor2(4, 3));
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t c = 0; c < 3; ++c) CHECK(out(i, c) == enc.table.value(0, c));
    }
  }

  TEST_CASE("encoding matches weights times table") {
    auto enc = make_enc(5, 4, 3, 6);
    core::Rng rng(2);
    Tensor2 x = testing::random_matrix(5, 4, rng);
    auto beta = enc.compute_beta(5);
    auto out = enc.encode(x);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t c = 0; c < 4; ++c) {
        double acc = x(i, c);
        for (std::size_t j = 0; j < 3; ++j) acc += beta(i, j) * enc.table.value(j, c);
        CHECK(out(i, c) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("encoding shifts additively in the input") {
    auto enc = make_enc(5, 4, 3, 8);
    core::Rng rng(3);
    Tensor2 x1 = testing::random_matrix(5, 4, rng), x2 = testing::random_matrix(5, 4, rng);
    Tensor2 sum(5, 4);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = x1[i] + x2[i];
    auto lhs = enc.encode(sum), rhs = enc.encode(x1);
    for (std::size_t i = 0; i < sum.size(); ++i) {
      CHECK(lhs[i] == doctest::Approx(rhs[i] + x2[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("input width must match the table") {
    auto enc = make_enc(5, 4, 3, 9);
    CHECK_THROWS_AS(enc.encode(Tensor2(5, 3)), DimensionError);
  }

  TEST_CASE("default centres are bin midpoints") {
    core::Rng rng(1);
    auto enc = GaussianRangeEncoding::create(270, 90, 10, 8.0, rng);
    for (std::size_t j = 0; j < 10; ++j) {
      CHECK(enc.mu.value[j] == doctest::Approx(13.5 + 27.0 * j));
      CHECK(enc.sigma()[j] == doctest::Approx(8.0).epsilon(1e-6));
    }
  }

  TEST_CASE("width stays positive for any raw value") {
    auto enc = make_enc(3, 2, 2, 10);
    enc.sigma_raw.value[0] = -500.0;
    CHECK(enc.sigma()[0] >= GaussianRangeEncoding::kSigmaFloor);
    auto b = enc.compute_b(3);
    CHECK(b.all_finite());
  }
}
