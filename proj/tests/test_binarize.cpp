#include <doctest.h>

#include <cmath>
#include <set>

#include "hbnn/binarize.hpp"
#include "hbnn/error.hpp"
#include "oracles.hpp"

using namespace hbnn;

namespace {

const Tensor kExample({4}, {0.1, -0.5, 0.9, -0.2});

void check_values(const Tensor &t, const std::vector<double> &expected, double tol = 1e-9) {
  REQUIRE(t.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(std::fabs(t[i] - expected[i]) <= tol);
}

} // namespace

TEST_CASE("hard_sigmoid clamps") {
  CHECK(hard_sigmoid(0.0) == 0.5);
  CHECK(hard_sigmoid(3.0) == 1.0);
  CHECK(hard_sigmoid(-3.0) == 0.0);
  CHECK(hard_sigmoid(1.0) == 1.0);
  CHECK(hard_sigmoid(-1.0) == 0.0);
}

TEST_CASE("stochastic_binarize probabilities") {
  Rng rng(17);
  const Tensor sure = stochastic_binarize(Tensor({3}, {5.0, -5.0, 5.0}), rng);
  check_values(sure, {1.0, -1.0, 1.0}, 0.0);
  const Tensor zeros({100000}, 0.0);
  const Tensor s = stochastic_binarize(zeros, rng);
  double pos = 0.0;
  for (double v : s.values())
    pos += v > 0 ? 1.0 : 0.0;
  CHECK(std::fabs(pos / 1e5 - 0.5) < 0.01);
  // Mean of draws at t = 0.4 approaches 2 * hard_sigmoid(0.4) - 1 = 0.4.
  const Tensor s2 = stochastic_binarize(Tensor({100000}, 0.4), rng);
  double mean = 0.0;
  for (double v : s2.values())
    mean += v;
  CHECK(std::fabs(mean / 1e5 - 0.4) < 0.02);
}

TEST_CASE("sign_binarize ties and scale invariance") {
  check_values(sign_binarize(Tensor({2}, {0.1, -0.5})), {1.0, -1.0}, 0.0);
  check_values(sign_binarize(Tensor({1}, {0.0})), {1.0}, 0.0);
  CHECK(sign_binarize(kExample) == sign_binarize(Tensor({4}, {0.3, -1.5, 2.7, -0.6})));
}

TEST_CASE("scaled_sign_binarize") {
  const Tensor t({4}, {1.0, 2.0, 3.0, -2.0});
  const auto s = scaled_sign_binarize(t);
  CHECK(s.alpha == 2.0);
  CHECK(s.alpha == mean_abs(t));
  check_values(s.signs, {1.0, 1.0, 1.0, -1.0}, 0.0);
  const auto c = scaled_sign_binarize(Tensor({2}, {0.7, 0.7}));
  CHECK(c.alpha * c.signs[0] == 0.7);
}

TEST_CASE("residual_binarize hand values") {
  const auto h1 = residual_binarize(kExample, 1);
  REQUIRE(h1.planes().size() == 1);
  CHECK(std::fabs(h1.planes()[0].scale - 0.425) < 1e-12);
  CHECK(h1.planes()[0].signs == std::vector<std::int8_t>{1, -1, 1, -1});
  check_values(reconstruct(h1), {0.425, -0.425, 0.425, -0.425});

  const auto h2 = residual_binarize(kExample, 2);
  REQUIRE(h2.planes().size() == 2);
  CHECK(std::fabs(h2.planes()[1].scale - 0.275) < 1e-12);
  CHECK(h2.planes()[1].signs == std::vector<std::int8_t>{-1, -1, 1, 1});
  check_values(reconstruct(h2), {0.15, -0.7, 0.7, -0.15});

  const auto exact = residual_binarize(Tensor({2}, {0.3, -0.3}), 3);
  CHECK(exact.planes()[0].scale == 0.3);
  CHECK(exact.planes()[1].scale == 0.0);
  check_values(reconstruct(exact), {0.3, -0.3}, 0.0);

  CHECK_THROWS_AS(residual_binarize(kExample, 0), Error);
  CHECK_THROWS_AS(residual_binarize(kExample, 9), Error);
}

TEST_CASE("hetero_binarize hand values") {
  const BitMask mask({4}, {2, 1, 2, 1});
  const auto h = hetero_binarize(kExample, mask);
  CHECK(std::fabs(h.planes()[0].scale - 0.425) < 1e-12);
  CHECK(std::fabs(h.planes()[1].scale - 0.4) < 1e-12);
  CHECK(h.planes()[1].signs == std::vector<std::int8_t>{-1, 0, 1, 0});
  check_values(reconstruct(h), {0.025, -0.425, 0.825, -0.425});
  CHECK(mask.average() == 1.5);
  CHECK(mask.total_bits() == 6);
}

TEST_CASE("hetero_binarize matches the literal oracle and reduces to residual_binarize") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> v(n);
    std::vector<std::uint8_t> w(n);
    std::vector<int> wi(n);
    for (std::size_t j = 0; j < n; ++j) {
      v[j] = rng.gaussian();
      w[j] = static_cast<std::uint8_t>(1 + rng.below(4));
      wi[j] = w[j];
    }
    const Tensor t({n}, v);
    const auto h = hetero_binarize(t, BitMask({n}, w));
    const auto ref = oracle::residual(v, wi);
    const Tensor rec = reconstruct(h);
    for (std::size_t j = 0; j < n; ++j)
      CHECK(std::fabs(rec[j] - ref.reconstruction[j]) <= 1e-12);
    for (std::size_t i = 0; i < ref.scales.size(); ++i)
      CHECK(std::fabs(h.planes()[i].scale - ref.scales[i]) <= 1e-12);

    const int bits = 1 + static_cast<int>(rng.below(4));
    CHECK(hetero_binarize(t, BitMask::uniform({n}, bits)) == residual_binarize(t, bits));
  }
}

TEST_CASE("reconstruction uses only prefix sign sums") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(16);
    std::vector<std::uint8_t> w(n);
    for (auto &x : w)
      x = static_cast<std::uint8_t>(1 + rng.below(3));
    const Tensor t = gaussian_tensor({n}, 100 + trial);
    const auto h = hetero_binarize(t, BitMask({n}, w));
    const Tensor rec = reconstruct(h);
    for (std::size_t j = 0; j < n; ++j) {
      // Enumerate every sign pattern over the element's planes.
      bool found = false;
      for (unsigned pattern = 0; pattern < (1u << w[j]); ++pattern) {
        double v = 0.0;
        for (int i = 0; i < w[j]; ++i)
          v += ((pattern >> i) & 1 ? 1.0 : -1.0) * h.planes()[i].scale;
        found = found || std::fabs(v - rec[j]) <= 1e-12;
      }
      CHECK(found);
    }
  }
}

TEST_CASE("distinct reconstruction values are bounded by 2^(n+1) - 2") {
  const std::size_t n = 4096;
  const Tensor t = gaussian_tensor({n}, 7);
  std::vector<std::uint8_t> w(n);
  for (std::size_t j = 0; j < n; ++j)
    w[j] = static_cast<std::uint8_t>(1 + j % 3);
  const Tensor rec = reconstruct(hetero_binarize(t, BitMask({n}, w)));
  std::set<double> distinct(rec.values().begin(), rec.values().end());
  CHECK(distinct.size() <= (1u << 4) - 2);
}

TEST_CASE("residual error is non-increasing in bits") {
  const Tensor t = gaussian_tensor({5000}, 21);
  double prev = 1e300;
  for (int b = 1; b <= kMaxBits; ++b) {
    const double d = normalized_distance(t, reconstruct(residual_binarize(t, b)));
    CHECK(d <= prev);
    prev = d;
  }
}

TEST_CASE("zero input gives zero scales") {
  const auto h = residual_binarize(Tensor({3}, 0.0), 2);
  CHECK(h.planes()[0].scale == 0.0);
  check_values(reconstruct(h), {0.0, 0.0, 0.0}, 0.0);
}

TEST_CASE("ste_gradient indicator") {
  const Tensor t({4}, {0.5, 1.5, -1.0, 1.0});
  const Tensor up({4}, {2.0, 2.0, 3.0, 4.0});
  check_values(ste_gradient(t, up), {2.0, 0.0, 3.0, 4.0}, 0.0);
  const Tensor ones({4}, 1.0);
  CHECK(ste_gradient(t, ste_gradient(t, ones)) == ste_gradient(t, ones));
}

TEST_CASE("mask and tensor validation") {
  CHECK_THROWS_AS(BitMask({2}, {1, 9}), Error);
  CHECK_THROWS_AS(BitMask({2}, {0, 1}), Error);
  CHECK_THROWS_AS(hetero_binarize(kExample, BitMask({3}, {1, 1, 1})), Error);
  Tensor bad = kExample;
  bad[1] = std::nan("");
  CHECK_THROWS_AS(residual_binarize(bad, 1), Error);
}
