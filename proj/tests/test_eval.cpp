#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "xvloc/eval.hpp"

using namespace xvloc;

namespace {

Trajectory line(std::size_t n, double step, double y = 0.0) {
  Trajectory t;
  for (std::size_t i = 0; i < n; ++i) {
    t.push_back({static_cast<double>(i), {step * static_cast<double>(i), y, 0.0}});
  }
  return t;
}

Trajectory shifted(const Trajectory& t, const std::vector<double>& dy) {
  Trajectory out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    Pose p = t[i].pose;
    p.y += dy[i];
    out.push_back({t[i].t, p});
  }
  return out;
}

WorldModel small_world() { return build_world(WorldConfig{}); }

}  // namespace

TEST(Ate, Examples) {
  const Trajectory gt = line(3, 1.0);
  const AteResult zero = ate(gt, gt);
  EXPECT_EQ(zero.mean, 0.0);
  EXPECT_EQ(zero.max, 0.0);
  const Trajectory gt2 = line(2, 1.0);
  const AteResult a = ate(shifted(gt2, {3, 4}), gt2);
  EXPECT_DOUBLE_EQ(a.mean, 3.5);
  EXPECT_DOUBLE_EQ(a.max, 4.0);
  const AteResult b = ate(shifted(gt, {0, 0, 9}), gt);
  EXPECT_DOUBLE_EQ(b.mean, 3.0);
  EXPECT_DOUBLE_EQ(b.max, 9.0);
}

TEST(Ate, AssociationFailures) {
  const Trajectory gt = line(3, 1.0);
  Trajectory off;
  off.push_back({10.0, {0, 0, 0}});
  EXPECT_THROW(ate(off, gt), DomainError);
  EXPECT_THROW(ate(Trajectory{}, gt), ConfigError);
}

TEST(Sdr, Examples) {
  const Trajectory gt = line(11, 10.0);
  EXPECT_EQ(sdr(gt, gt), 0.0);
  EXPECT_NEAR(sdr(line(11, 11.0), gt), 10.0, 1e-12);
  EXPECT_NEAR(sdr(line(11, 9.0), gt), 10.0, 1e-12);
  EXPECT_THROW(sdr(line(3, 0.0), line(3, 0.0)), DomainError);
}

TEST(SuccessRate, Examples) {
  const std::vector<double> errors{5, 12, 30};
  const std::vector<double> tau{10, 25, 50};
  const auto sr = success_rate_from_errors(errors, tau);
  EXPECT_NEAR(sr.at(10), 100.0 / 3.0, 1e-12);
  EXPECT_NEAR(sr.at(25), 200.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(sr.at(50), 100.0);
  const auto zero = success_rate_from_errors(std::vector<double>{0, 0}, tau);
  for (const auto& [t, v] : zero) {
    EXPECT_DOUBLE_EQ(v, 100.0);
  }
  EXPECT_THROW(success_rate_from_errors(errors, std::vector<double>{}), ConfigError);
}

TEST(SuccessRate, MonotoneInThreshold) {
  Rng rng(1);
  std::vector<double> errors;
  for (int i = 0; i < 100; ++i) {
    errors.push_back(std::abs(rng.normal(0.0, 20.0)));
  }
  const std::vector<double> tau{1, 5, 10, 25, 50, 1e300};
  const auto sr = success_rate_from_errors(errors, tau);
  double prev = -1.0;
  for (const auto& [t, v] : sr) {
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_DOUBLE_EQ(prev, 100.0);
}

TEST(Metrics, TranslationInvariant) {
  Rng rng(2);
  Trajectory gt;
  Trajectory pred;
  Trajectory gt_s;
  Trajectory pred_s;
  for (int i = 0; i < 50; ++i) {
    const Pose g{rng.uniform(0, 100), rng.uniform(0, 100), 0.0};
    const Pose p{g.x + rng.normal(0, 5), g.y + rng.normal(0, 5), 0.0};
    gt.push_back({i * 0.5, g});
    pred.push_back({i * 0.5, p});
    gt_s.push_back({i * 0.5, {g.x + 1234.5, g.y - 77.25, 0.0}});
    pred_s.push_back({i * 0.5, {p.x + 1234.5, p.y - 77.25, 0.0}});
  }
  const MetricsReport a = evaluate(pred, gt);
  const MetricsReport b = evaluate(pred_s, gt_s);
  EXPECT_NEAR(a.ate_mean, b.ate_mean, 1e-9);
  EXPECT_NEAR(a.ate_max, b.ate_max, 1e-9);
  EXPECT_NEAR(a.sdr, b.sdr, 1e-9);
  for (const auto& [t, v] : a.sr) {
    EXPECT_EQ(v, b.sr.at(t));
  }
}

TEST(RankPercentile, Examples) {
  std::vector<double> one_hot(900, 0.0);
  one_hot[417] = 1.0;
  EXPECT_NEAR(rank_percentile(one_hot, 417), 100.0 / 900.0, 1e-12);
  // Ties take the average rank, (n + 1) / 2 of n.
  const std::vector<double> flat(900, 0.3);
  EXPECT_NEAR(rank_percentile(flat, 5), 50.0, 100.0 / 1800.0 + 1e-12);
  const std::vector<double> three{0.1, 0.95, 0.2, 0.3, 0.9, 0.95, 0.0, 0.5, 0.4};
  EXPECT_NEAR(rank_percentile(three, 4), 100.0 / 3.0, 1e-12);
}

TEST(RankPercentile, MonotoneTransformInvariant) {
  Rng rng(3);
  std::vector<double> s;
  for (int i = 0; i < 100; ++i) {
    s.push_back(std::round(rng.uniform(-1, 1) * 20.0) / 20.0);  // forces ties
  }
  std::vector<double> t;
  for (double v : s) {
    t.push_back(std::exp(3.0 * v) + 7.0);
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_DOUBLE_EQ(rank_percentile(s, i), rank_percentile(t, i));
  }
}

TEST(LikelihoodMap, PerfectMatcherAndNormalization) {
  const WorldModel world = small_world();
  const Pose gt{500, 500, 0.3};
  const auto perfect = [&](std::span<const Pose> ps) {
    std::vector<double> s;
    for (const auto& p : ps) {
      s.push_back(-distance(p, gt));
    }
    return s;
  };
  const LikelihoodMap m = likelihood_map(world, gt, gt.theta, perfect);
  ASSERT_EQ(m.scores.size(), 900u);
  EXPECT_NEAR(m.gt_rank_percentile, 100.0 / 900.0, 1e-12);
  EXPECT_NEAR(m.cell_pose(15, 15).x, gt.x, 1e-9);
  EXPECT_NEAR(m.cell_pose(15, 15).y, gt.y, 1e-9);
  EXPECT_EQ(*std::min_element(m.scores.begin(), m.scores.end()), 0.0);
  EXPECT_EQ(*std::max_element(m.scores.begin(), m.scores.end()), 1.0);
  EXPECT_EQ(m.scores[m.gt_cell], 1.0);

  const LikelihoodMap c = likelihood_map(world, gt, gt.theta, [](std::span<const Pose> ps) {
    return std::vector<double>(ps.size(), 0.7);
  });
  EXPECT_NEAR(c.gt_rank_percentile, 50.0, 0.1);
  EXPECT_EQ(c.scores[0], 0.5);
}

TEST(LikelihoodMap, OffMapCellsFlaggedAndScoredZero) {
  const WorldModel world = small_world();
  const Pose gt{30, 30, 0.0};
  const LikelihoodMap m = likelihood_map(world, gt, 0.0, [](std::span<const Pose> ps) {
    return std::vector<double>(ps.size(), 5.0);
  });
  EXPECT_TRUE(m.off_map[0]);
  EXPECT_EQ(m.scores[0], 0.0);
  EXPECT_FALSE(m.off_map[m.gt_cell]);
  EXPECT_EQ(m.scores[m.gt_cell], 1.0);
}

TEST(LikelihoodMap, ImageRowsNorthFirst) {
  LikelihoodMap m;
  m.grid = 4;
  m.cell_size = 1.0;
  m.scores.assign(16, 0.5);
  m.scores[0] = 0.0;   // south-west
  m.scores[15] = 1.0;  // north-east
  const ImagePatch img = likelihood_image(m);
  EXPECT_EQ(img.at(0, 3), 1.0);
  EXPECT_EQ(img.at(3, 0), 0.0);
}
