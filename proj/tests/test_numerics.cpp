#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "advbv/numerics.hpp"

using namespace advbv;

TEST(LogSumExp, SymmetricPair) { EXPECT_NEAR(log_sum_exp({0.0, 0.0}), std::log(2.0), 1e-15); }

TEST(LogSumExp, SingleValueIsIdentity) {
  for (double t : {-700.0, -3.5, 0.0, 2.25, 710.0}) EXPECT_DOUBLE_EQ(log_sum_exp({t}), t);
}

TEST(LogSumExp, LargeInputsDoNotOverflow) {
  EXPECT_NEAR(log_sum_exp({1000.0, 1000.0}), 1000.0 + std::log(2.0), 1e-12);
}

TEST(LogSumExp, EmptyInputThrows) { EXPECT_THROW(log_sum_exp(Vector(0)), ContractError); }

TEST(Softplus, KnownValues) {
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  // log(1 + e), 30-digit reference.
  EXPECT_NEAR(softplus(-1.0), 1.31326168751822283, 1e-15);
  EXPECT_NEAR(softplus(50.0), 1.92874984796391778e-22, 1e-36);
  EXPECT_NEAR(softplus(-800.0), 800.0, 1e-12);
}

TEST(Softmax, KnownValues) {
  Vector z(2);
  z << 0.0, 0.0;
  EXPECT_NEAR(softmax(z)[0], 0.5, 1e-15);
  z << 1.0, 0.0;
  const Vector p = softmax(z);
  EXPECT_NEAR(p[0], 0.731058578630004879, 1e-15);
  EXPECT_NEAR(p[1], 0.268941421369995121, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
  for (double c : {-500.0, 0.0, 3.0, 900.0}) {
    const Vector p = softmax(Vector::Constant(3, c));
    for (Index i = 0; i < 3; ++i) EXPECT_NEAR(p[i], 1.0 / 3.0, 1e-15);
  }
}

TEST(Rng, ReproducibleStreams) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs = differs || x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, ChildStreamsAreDistinctAndStable) {
  EXPECT_EQ(Rng::child_seed(7, 3), Rng::child_seed(7, 3));
  std::set<std::uint64_t> seeds;
  for (std::uint64_t id = 0; id < 1000; ++id) seeds.insert(Rng::child_seed(7, id));
  EXPECT_EQ(seeds.size(), 1000u);
  EXPECT_EQ(Rng::derive_seed(7, {1, 2}), Rng::child_seed(Rng::child_seed(7, 1), 2));
}

TEST(Rng, UniformAndNormalMoments) {
  Rng rng(2024);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.015);
}

TEST(Rng, PermutationIsBijection) {
  Rng rng(5);
  auto p = rng.permutation(37);
  std::sort(p.begin(), p.end());
  for (Index i = 0; i < 37; ++i) EXPECT_EQ(p[static_cast<std::size_t>(i)], i);
}

TEST(Rng, UniformIndexInRange) {
  Rng rng(9);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.uniform_index(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Format, RoundTripsSeventeenDigits) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-30, 30));
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_TRUE(std::isnan(parse_double(format_double(std::nan("")))));
  EXPECT_EQ(parse_double(format_double(-INFINITY)), -INFINITY);
}

TEST(Checks, EnsureFiniteThrowsNumericError) {
  Vector v = Vector::Ones(3);
  EXPECT_NO_THROW(ensure_finite(v, "v"));
  v[1] = std::nan("");
  EXPECT_THROW(ensure_finite(v, "v"), NumericError);
}
