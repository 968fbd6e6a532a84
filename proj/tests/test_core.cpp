#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "xvloc/core.hpp"

using namespace xvloc;

TEST(WrapAngle, Examples) {
  EXPECT_DOUBLE_EQ(wrap_angle(0.0), 0.0);
  EXPECT_NEAR(wrap_angle(1.5 * kPi), -0.5 * kPi, 1e-12);
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
  EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
}

TEST(WrapAngle, RejectsNonFinite) {
  EXPECT_THROW(wrap_angle(std::numeric_limits<double>::quiet_NaN()), DomainError);
  EXPECT_THROW(wrap_angle(std::numeric_limits<double>::infinity()), DomainError);
}

TEST(WrapAngle, IdempotentAndInRange) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-50.0, 50.0);
    const double w = wrap_angle(a);
    EXPECT_GT(w, -kPi);
    EXPECT_LE(w, kPi);
    EXPECT_EQ(wrap_angle(w), w);
    EXPECT_NEAR(std::remainder(a - w, 2.0 * kPi), 0.0, 1e-9);
  }
}

TEST(AngDiff, Examples) {
  EXPECT_NEAR(ang_diff(deg2rad(170.0), deg2rad(-170.0)), deg2rad(-20.0), 1e-12);
  EXPECT_NEAR(ang_diff(0.0, 0.5 * kPi), -0.5 * kPi, 1e-12);
  EXPECT_DOUBLE_EQ(ang_diff(1.234, 1.234), 0.0);
  EXPECT_THROW(ang_diff(0.0, std::numeric_limits<double>::quiet_NaN()), DomainError);
}

TEST(AngDiff, Antisymmetric) {
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-10.0, 10.0);
    const double b = rng.uniform(-10.0, 10.0);
    const double d = ang_diff(a, b);
    EXPECT_LE(std::abs(d), kPi);
    if (std::abs(std::abs(d) - kPi) > 1e-9) {
      EXPECT_NEAR(d, -ang_diff(b, a), 1e-12);
    }
  }
}

TEST(CircularMean, Examples) {
  {
    const std::vector<double> a{deg2rad(179.0), deg2rad(-179.0)};
    const std::vector<double> w{0.5, 0.5};
    EXPECT_NEAR(weighted_circular_mean(a, w), kPi, 1e-12);
  }
  {
    const std::vector<double> a{0.0};
    const std::vector<double> w{1.0};
    EXPECT_DOUBLE_EQ(weighted_circular_mean(a, w), 0.0);
  }
  {
    const std::vector<double> a{0.0, 0.5 * kPi};
    const std::vector<double> w{0.5, 0.5};
    EXPECT_NEAR(weighted_circular_mean(a, w), std::atan2(1.0, 1.0), 1e-12);
  }
}

TEST(CircularMean, AntipodalIsUndefined) {
  const std::vector<double> a{0.0, kPi};
  const std::vector<double> w{0.5, 0.5};
  EXPECT_THROW(weighted_circular_mean(a, w), DomainError);
}

TEST(CircularMean, RejectsBadWeights) {
  const std::vector<double> a{0.0, 1.0};
  const std::vector<double> w{0.5, 0.6};
  EXPECT_THROW(weighted_circular_mean(a, w), DomainError);
}

TEST(CircularMean, RotationEquivariant) {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(5);
    std::vector<double> w(5);
    double total = 0.0;
    for (int i = 0; i < 5; ++i) {
      a[static_cast<std::size_t>(i)] = rng.uniform(-1.0, 1.0);
      w[static_cast<std::size_t>(i)] = rng.uniform(0.1, 1.0);
      total += w[static_cast<std::size_t>(i)];
    }
    for (double& v : w) {
      v /= total;
    }
    const double c = rng.uniform(-kPi, kPi);
    std::vector<double> shifted;
    for (double v : a) {
      shifted.push_back(v + c);
    }
    EXPECT_NEAR(ang_diff(weighted_circular_mean(shifted, w), wrap_angle(weighted_circular_mean(a, w) + c)), 0.0,
                1e-9);
  }
}

TEST(Trajectory, RejectsNonIncreasingTime) {
  Trajectory t;
  t.push_back({0.0, {0, 0, 0}});
  EXPECT_THROW(t.push_back({0.0, {1, 0, 0}}), DomainError);
}

TEST(Trajectory, CsvRoundTripIsExact) {
  Trajectory t;
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    t.push_back({0.1 * i, {rng.uniform(0, 600), rng.uniform(0, 600), wrap_angle(rng.uniform(-4, 4))}});
  }
  std::stringstream ss;
  write_trajectory_csv(ss, t);
  EXPECT_EQ(ss.str().substr(0, 12), "t,x,y,theta\n");
  const Trajectory back = read_trajectory_csv(ss);
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(back[i].t, t[i].t);
    EXPECT_EQ(back[i].pose, t[i].pose);
  }
}

TEST(Trajectory, CsvRejectsBadHeader) {
  std::stringstream ss("time,x,y,theta\n0,1,2,3\n");
  EXPECT_THROW(read_trajectory_csv(ss), std::runtime_error);
}

TEST(Trajectory, ArcLength) {
  Trajectory t;
  t.push_back({0.0, {0, 0, 0}});
  t.push_back({1.0, {3, 4, 0}});
  t.push_back({2.0, {3, 10, 0}});
  EXPECT_DOUBLE_EQ(t.arc_length(), 11.0);
}

TEST(Seeds, DerivedStreamsAreDistinctAndStable) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
  Rng a(5);
  Rng b(5);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(a.next(), b.next());
  }
}
