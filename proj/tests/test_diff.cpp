#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <numbers>

#include "ssalign/diff.hpp"
#include "ssalign/errors.hpp"
#include "support.hpp"

using namespace ssalign;
using ssalign::testing::random_probs;
using ssalign::testing::random_tensor;

namespace {

constexpr double kLn2 = std::numbers::ln2;

double weighted_sum(const Tensor2& a, const Tensor2& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * w[i];
  return s;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor2 a{{1, 2}, {3, 4}};
  CHECK(a.rows() == 2);
  CHECK(a(1, 0) == 3);
  CHECK(matmul(a, Tensor2::identity(2)) == a);
  CHECK(transpose(a) == Tensor2{{1, 3}, {2, 4}});
  CHECK(matmul_tn(a, a) == matmul(transpose(a), a));
  CHECK(matmul_nt(a, a) == matmul(a, transpose(a)));
  CHECK(column_sum(a) == Tensor2{{4, 6}});
  CHECK(argmax_row(Tensor2{{2, 5, 5}}, 0) == 1);
  CHECK_THROWS_AS(Tensor2(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor2(1, 1, std::vector<double>{std::nan("")}), ArgumentError);
  CHECK_THROWS_AS(matmul(a, Tensor2(3, 1)), DimensionError);
}

TEST_CASE("affine") {
  CHECK(affine(Tensor2{{1, 2}}, Tensor2::identity(2), Tensor2{{0, 0}}) == Tensor2{{1, 2}});
  CHECK(affine(Tensor2{{1, 0}}, Tensor2{{2, 3}, {5, 7}}, Tensor2{{1, 1}}) == Tensor2{{3, 4}});
  CHECK_THROWS_AS(affine(Tensor2{{1, 2, 3}}, Tensor2::identity(2), Tensor2{{0, 0}}), DimensionError);
  CHECK_THROWS_AS(affine(Tensor2{{1, 2}}, Tensor2::identity(2), Tensor2{{0, 0, 0}}), DimensionError);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor2 g = random_tensor(3, 5, seed + 100);
    auto loss = [&](const ParamSet& p) {
      const Tensor2 out = affine(p[0], p[1], p[2]);
      const auto grads = affine_backward(p[0], p[1], g);
      return DualValue{weighted_sum(out, g), {grads.dx, grads.dw, grads.db}};
    };
    const ParamSet p{random_tensor(3, 4, seed), random_tensor(4, 5, seed + 1), random_tensor(1, 5, seed + 2)};
    const auto report = check_gradients(loss, p, 1e-5, 1e-6);
    CHECK_MESSAGE(report.passed(), "seed " << seed << " worst " << report.worst());
  }
}

TEST_CASE("relu") {
  CHECK(relu(Tensor2{{-1, 0, 2}}) == Tensor2{{0, 0, 2}});
  const Tensor2 neg{{-1, -2}, {-0.5, -3}};
  CHECK(relu(neg) == Tensor2(2, 2));
  CHECK(relu_backward(neg, Tensor2(2, 2, 1.0)) == Tensor2(2, 2));
  CHECK(relu_backward(Tensor2{{0.0}}, Tensor2{{1.0}}) == Tensor2{{0.0}});

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Tensor2 x = random_tensor(4, 6, seed);
    for (double& v : x.data()) {
      if (std::abs(v) < 1e-3) v = 0.5;
    }
    const Tensor2 g = random_tensor(4, 6, seed + 50);
    auto loss = [&](const ParamSet& p) {
      return DualValue{weighted_sum(relu(p[0]), g), {relu_backward(p[0], g)}};
    };
    const auto report = check_gradients(loss, {x}, 1e-5, 1e-6);
    CHECK_MESSAGE(report.passed(), "seed " << seed << " worst " << report.worst());
  }
}

TEST_CASE("softmax") {
  const Tensor2 half = softmax(Tensor2{{0, 0}});
  CHECK(half(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  const Tensor2 thirds = softmax(Tensor2{{std::log(2.0), 0.0}});
  CHECK(thirds(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(thirds(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  const Tensor2 big = softmax(Tensor2{{1000, 0}});
  CHECK(big.all_finite());
  CHECK(big(0, 0) == 1.0);
  // exp(-1000) underflows to 0 in double; the exact answer is below 1e-434.
  CHECK(big(0, 1) < 1e-300);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor2 z = random_tensor(5, 7, seed, 3.0);
    const Tensor2 p = softmax(z);
    Tensor2 shifted = z;
    for (std::size_t i = 0; i < shifted.rows(); ++i) {
      for (std::size_t j = 0; j < shifted.cols(); ++j) shifted(i, j) += 17.0 * (i + 1);
    }
    const Tensor2 q = softmax(shifted);
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double s = 0.0;
      for (double v : p.row_span(i)) s += v;
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    CHECK(max_abs_diff(p, q) < 1e-9);

    const Tensor2 g = random_tensor(5, 7, seed + 9);
    auto loss = [&](const ParamSet& ps) {
      const Tensor2 out = softmax(ps[0]);
      return DualValue{weighted_sum(out, g), {softmax_backward(out, g)}};
    };
    const auto report = check_gradients(loss, {z}, 1e-5, 1e-4);
    CHECK_MESSAGE(report.passed(), "seed " << seed << " worst " << report.worst());
  }
}

TEST_CASE("cross entropy") {
  CHECK(cross_entropy(Tensor2{{1, 0}}, Tensor2{{1, 0}}).value == doctest::Approx(0.0));
  CHECK(cross_entropy(Tensor2{{0.5, 0.5}}, Tensor2{{1, 0}}).value == doctest::Approx(kLn2).epsilon(1e-15));
  CHECK(cross_entropy(Tensor2{{0.5, 0.5}}, Tensor2{{0.5, 0.5}}).value == doctest::Approx(kLn2).epsilon(1e-15));
  CHECK(cross_entropy(Tensor2{{0.5, 0.5}}, 0).value == doctest::Approx(kLn2).epsilon(1e-15));
  // The clamp keeps a zero probability finite.
  CHECK(cross_entropy(Tensor2{{0, 1}}, 0).value == doctest::Approx(-std::log(kProbClamp)));
  CHECK_THROWS_AS(cross_entropy(Tensor2{{0.5, 0.5}}, Tensor2{{1, 0, 0}}), DimensionError);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor2 o = random_probs(1, 5, seed);
    const Tensor2 t = random_probs(1, 5, seed + 1);
    double expected = 0.0;
    for (std::size_t c = 0; c < 5; ++c) expected -= t[c] * std::log(o[c]);
    CHECK(cross_entropy(o, t).value == doctest::Approx(expected).epsilon(1e-13));
    CHECK(cross_entropy(o, o).value == doctest::Approx(entropy(o.data())).epsilon(1e-13));
    auto loss = [&](const ParamSet& p) {
      auto ce = cross_entropy(p[0], t);
      return DualValue{ce.value, {ce.grad}};
    };
    const auto report = check_gradients(loss, {o}, 1e-7, 1e-4);
    CHECK_MESSAGE(report.passed(), "seed " << seed << " worst " << report.worst());
  }
}

TEST_CASE("kl divergence") {
  CHECK(kl_divergence(Tensor2{{0.3, 0.7}}, Tensor2{{0.3, 0.7}}).value == doctest::Approx(0.0));
  CHECK(kl_divergence(Tensor2{{1, 0}}, Tensor2{{0.5, 0.5}}).value == doctest::Approx(kLn2).epsilon(1e-5));
  const Tensor2 p{{0.9, 0.1}}, q{{0.5, 0.5}};
  const double pq = kl_divergence(p, q).value, qp = kl_divergence(q, p).value;
  CHECK(pq == doctest::Approx(0.9 * std::log(1.8) + 0.1 * std::log(0.2)));
  CHECK(qp == doctest::Approx(0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1)));
  CHECK(std::abs(pq - qp) > 0.1);
  CHECK_THROWS_AS(kl_divergence(Tensor2{{0.5, 0.5}}, Tensor2{{1, 0, 0}}), DimensionError);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor2 a = random_probs(1, 6, seed);
    if (seed % 2 == 0) {  // exercise the clamp with a near-one-hot row
      a = softmax(Tensor2{{40, 0, 0, 0, 0, 0}});
    }
    const Tensor2 b = random_probs(1, 6, seed + 1);
    CHECK(kl_divergence(a, a).value <= 1e-12);
    CHECK(kl_divergence(a, b).value >= -1e-12);
    CHECK(kl_divergence(b, a).value >= -1e-12);
    auto loss = [&](const ParamSet& ps) {
      auto kl = kl_divergence(a, ps[0]);
      return DualValue{kl.value, {kl.grad}};
    };
    const auto report = check_gradients(loss, {b}, 1e-7, 1e-4);
    CHECK_MESSAGE(report.passed(), "seed " << seed << " worst " << report.worst());
  }
}

TEST_CASE("euclidean distance") {
  const auto same = euclidean_distance(Tensor2{{1, 2}}, Tensor2{{1, 2}});
  CHECK(same.value == 0.0);
  CHECK(same.da == Tensor2(1, 2));
  CHECK(same.db == Tensor2(1, 2));
  CHECK(euclidean_distance(Tensor2{{3, 4}}, Tensor2{{0, 0}}).value == doctest::Approx(5.0).epsilon(1e-15));
  CHECK_THROWS_AS(euclidean_distance(Tensor2{{3, 4}}, Tensor2{{0, 0, 0}}), DimensionError);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor2 a = random_tensor(1, 6, seed), b = random_tensor(1, 6, seed + 1);
    auto loss = [&](const ParamSet& p) {
      auto d = euclidean_distance(p[0], p[1]);
      return DualValue{d.value, {d.da, d.db}};
    };
    const auto report = check_gradients(loss, {a, b}, 1e-5, 1e-5);
    CHECK_MESSAGE(report.passed(), "seed " << seed << " worst " << report.worst());
  }
}

TEST_CASE("convex mix") {
  const Tensor2 a = random_tensor(2, 3, 1), b = random_tensor(2, 3, 2);
  CHECK(convex_mix(a, b, 1.0) == a);
  CHECK(convex_mix(a, b, 0.0) == b);
  CHECK(convex_mix(Tensor2{{2}}, Tensor2{{4}}, 0.5) == Tensor2{{3}});
  CHECK_THROWS_AS(convex_mix(a, b, 1.5), ArgumentError);
  CHECK_THROWS_AS(convex_mix(a, b, -0.1), ArgumentError);
  CHECK_THROWS_AS(convex_mix(a, Tensor2(3, 2), 0.5), DimensionError);
}

TEST_CASE("gradient checker") {
  SUBCASE("quadratic loss matches to rounding") {
    auto loss = [](const ParamSet& p) {
      Tensor2 g = p[0];
      g *= 2.0;
      return DualValue{frobenius_sq(p[0]), {g}};
    };
    const auto report = check_gradients(loss, {random_tensor(3, 3, 5)}, 1e-5, 1e-4);
    CHECK(report.passed());
    CHECK(report.worst() < 1e-8);
  }
  SUBCASE("a corrupted coordinate is flagged") {
    auto loss = [](const ParamSet& p) {
      Tensor2 g = p[0];
      g *= 2.0;
      g(1, 2) += 0.1;
      return DualValue{frobenius_sq(p[0]), {g}};
    };
    const auto report = check_gradients(loss, {random_tensor(3, 3, 5)}, 1e-5, 1e-4);
    REQUIRE_FALSE(report.passed());
    REQUIRE(report.flagged.size() == 1);
    CHECK(report.flagged[0].block == 0);
    CHECK(report.flagged[0].index == 5);
  }
  SUBCASE("a non-finite loss names the coordinate") {
    auto loss = [](const ParamSet& p) {
      const double v = p[0][1] > 1.0 ? std::numeric_limits<double>::infinity() : 0.0;
      return DualValue{v, {Tensor2(1, 2)}};
    };
    const ParamSet p{Tensor2{{0.0, 1.0}}};
    CHECK_THROWS_WITH_AS(check_gradients(loss, p, 1e-3, 1e-4), doctest::Contains("coordinate 1"),
                         TrainingError);
  }
  CHECK(gradient_rel_error(1.0, 1.0) == 0.0);
  CHECK(gradient_rel_error(0.0, 1e-9) < 1e-3);
}
