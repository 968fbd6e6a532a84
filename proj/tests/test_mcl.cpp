#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "xvloc/mcl.hpp"

using namespace xvloc;

namespace {

FilterConfig quiet_config(int m) {
  FilterConfig cfg;
  cfg.num_particles = m;
  cfg.init_sigma_xy = 0.0;
  cfg.init_sigma_theta = 0.0;
  cfg.motion = {0.0, 0.0, 0.0, 0.0};
  return cfg;
}

BeliefState belief_of(std::vector<Particle> ps) {
  BeliefState b;
  b.particles = std::move(ps);
  return b;
}

BeliefState random_belief(Rng& rng, int m) {
  std::vector<Particle> ps;
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    ps.push_back({{rng.normal(50.0, 3.0), rng.normal(-20.0, 5.0), rng.uniform(-kPi, kPi)}, rng.uniform(0.1, 1.0)});
    total += ps.back().weight;
  }
  for (auto& p : ps) {
    p.weight /= total;
  }
  return belief_of(std::move(ps));
}

}  // namespace

TEST(Init, ZeroSigmaPutsAllAtPrior) {
  const BeliefState b = init_particles({3, 4, 0.5}, quiet_config(300));
  ASSERT_EQ(b.particles.size(), 300u);
  for (const auto& p : b.particles) {
    EXPECT_EQ(p.pose.x, 3.0);
    EXPECT_EQ(p.pose.y, 4.0);
    EXPECT_EQ(p.pose.theta, 0.5);
    EXPECT_DOUBLE_EQ(p.weight, 1.0 / 300.0);
  }
}

TEST(Init, SampleMeanNearPrior) {
  FilterConfig cfg;
  cfg.num_particles = 10000;
  const BeliefState b = init_particles({10, 0, 0}, cfg);
  double mx = 0.0;
  for (const auto& p : b.particles) {
    mx += p.pose.x / 1e4;
  }
  EXPECT_LT(std::abs(mx - 10.0), 3.0 * cfg.init_sigma_xy / 100.0);
}

TEST(Init, RejectsTooFewParticles) {
  FilterConfig cfg;
  cfg.num_particles = 1;
  EXPECT_THROW(init_particles({0, 0, 0}, cfg), ConfigError);
}

TEST(Predict, NoiselessMotion) {
  const FilterConfig cfg = quiet_config(2);
  BeliefState b = belief_of({{{0, 0, 0}, 0.5}, {{0, 0, kPi / 2}, 0.5}});
  predict(b, 1.0, 0.0, cfg);
  EXPECT_NEAR(b.particles[0].pose.x, 1.0, 1e-15);
  EXPECT_NEAR(b.particles[0].pose.y, 0.0, 1e-15);
  EXPECT_NEAR(b.particles[1].pose.x, 0.0, 1e-15);
  EXPECT_NEAR(b.particles[1].pose.y, 1.0, 1e-15);
  predict(b, 1.0, 0.0, cfg);
  EXPECT_NEAR(b.particles[1].pose.y, 2.0, 1e-15);
  EXPECT_NEAR(b.particles[1].pose.theta, kPi / 2, 1e-15);
  EXPECT_EQ(b.particles[0].weight, 0.5);
}

TEST(Predict, NoiseGrowsCloudAtZeroControl) {
  FilterConfig cfg = quiet_config(1000);
  BeliefState b = init_particles({0, 0, 0}, cfg);
  cfg.motion = MotionNoise{};
  predict(b, 0.0, 0.0, cfg);
  double var = 0.0;
  for (const auto& p : b.particles) {
    var += p.pose.x * p.pose.x + p.pose.y * p.pose.y;
  }
  EXPECT_GT(var, 0.0);
  EXPECT_THROW(predict(b, std::nan(""), 0.0, cfg), DomainError);
}

TEST(Kde, SingleParticleMatchesGaussianEntropy) {
  FilterConfig cfg;
  cfg.kde_bandwidth_mode = KdeBandwidthMode::fixed;
  cfg.kde_fixed_h = 1.0;
  cfg.kde_grid_resolution = 0.1;
  cfg.kde_pad = 4.0;
  const BeliefState b = belief_of({{{7.3, -2.1, 0}, 1.0}});
  const double h = kde_spatial_entropy(b, cfg).entropy;
  EXPECT_NEAR(h + std::log(0.01), 1.0 + std::log(2.0 * kPi), 1e-2);
}

TEST(Kde, MultiParticleMatchesDirectSum) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const BeliefState b = random_belief(rng, 40);
    FilterConfig cfg;
    if (trial % 2 == 1) {
      cfg.kde_bandwidth_mode = KdeBandwidthMode::fixed;
      cfg.kde_fixed_h = 1.5;
    }
    const KdeGrid g = kde_grid(b.particles, cfg);
    EXPECT_NEAR(discrete_entropy(g.mass), oracle::kde_grid_entropy(b.particles, g), 1e-9);
    EXPECT_NEAR(kde_spatial_entropy(b, cfg).entropy, oracle::kde_grid_entropy(b.particles, g), 1e-9);
  }
}

TEST(Kde, BandwidthFloorAndBounds) {
  FilterConfig cfg;
  const BeliefState tight = belief_of({{{0, 0, 0}, 0.5}, {{0.01, 0, 0}, 0.5}});
  EXPECT_DOUBLE_EQ(kde_bandwidth(tight.particles, cfg), cfg.kde_h_floor);
  Rng rng(12);
  const BeliefState b = random_belief(rng, 100);
  const KdeGrid g = kde_grid(b.particles, cfg);
  const double h = discrete_entropy(g.mass);
  EXPECT_GE(h, 0.0);
  EXPECT_LE(h, std::log(static_cast<double>(g.mass.size())) + 1e-12);
}

TEST(Lambda, Examples) {
  FilterConfig cfg;
  cfg.lambda_base = 10.0;
  cfg.gamma = 0.5;
  EXPECT_NEAR(adaptive_lambda(2.0, cfg), 10.0 * std::exp(-1.0), 1e-12);
  EXPECT_NEAR(adaptive_lambda(2.0, cfg), 3.6788, 1e-4);
  EXPECT_DOUBLE_EQ(adaptive_lambda(0.0, cfg), 10.0);
  cfg.gamma = 0.0;
  EXPECT_DOUBLE_EQ(adaptive_lambda(7.0, cfg), 10.0);
}

TEST(Lambda, MonotoneAndBounded) {
  const FilterConfig cfg;
  Rng rng(13);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(0.0, 20.0);
    const double b = rng.uniform(0.0, 20.0);
    const double la = adaptive_lambda(a, cfg);
    const double lb = adaptive_lambda(b, cfg);
    EXPECT_GT(la, 0.0);
    EXPECT_LE(la, cfg.lambda_base);
    if (a < b) {
      EXPECT_GE(la, lb);
    }
  }
}

TEST(Update, TwoParticleExample) {
  BeliefState b = belief_of({{{0, 0, 0}, 0.5}, {{1, 0, 0}, 0.5}});
  apply_likelihood(b, std::vector<double>{1.0, 0.0}, 2.0);
  EXPECT_NEAR(b.particles[0].weight, std::exp(2.0) / (std::exp(2.0) + 1.0), 1e-15);
  EXPECT_NEAR(b.particles[0].weight, 0.8808, 1e-4);
  EXPECT_NEAR(b.particles[1].weight, 0.1192, 1e-4);
  BeliefState c = belief_of({{{0, 0, 0}, 0.3}, {{1, 0, 0}, 0.7}});
  apply_likelihood(c, std::vector<double>{0.9, -0.4}, 0.0);
  EXPECT_DOUBLE_EQ(c.particles[0].weight, 0.3);
  EXPECT_THROW(apply_likelihood(c, std::vector<double>{1.0}, 1.0), ShapeError);
}

TEST(Update, NormalizationAndArgmaxPreserved) {
  Rng rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    BeliefState b = random_belief(rng, 50);
    std::vector<double> prior;
    std::vector<double> s;
    for (const auto& p : b.particles) {
      prior.push_back(p.weight);
      s.push_back(rng.uniform(-1.0, 1.0));
    }
    apply_likelihood(b, s, rng.uniform(0.01, 50.0));
    double total = 0.0;
    std::size_t best_s = 0;
    std::size_t best_ratio = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      total += b.particles[i].weight;
      best_s = s[i] > s[best_s] ? i : best_s;
      best_ratio = b.particles[i].weight / prior[i] > b.particles[best_ratio].weight / prior[best_ratio] ? i : best_ratio;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_EQ(best_s, best_ratio);
  }
}

TEST(Update, EntropyAndLambdaFromIncomingBelief) {
  Rng rng(15);
  BeliefState b = random_belief(rng, 60);
  const FilterConfig cfg;
  const double h = kde_spatial_entropy(b, cfg).entropy;
  std::vector<double> s(60, 0.0);
  s[3] = 1.0;
  const StepDiagnostics d = update_with_similarities(b, s, cfg);
  EXPECT_DOUBLE_EQ(d.entropy, h);
  EXPECT_DOUBLE_EQ(d.lambda, adaptive_lambda(h, cfg));
  EXPECT_DOUBLE_EQ(b.last_lambda, d.lambda);
}

TEST(Resample, HandWalkedIndices) {
  EXPECT_EQ(systematic_indices(std::vector<double>{0.5, 0.25, 0.25}, 4, 0.1),
            (std::vector<std::size_t>{0, 0, 1, 2}));
  EXPECT_EQ(systematic_indices(std::vector<double>{0, 1, 0}, 5, 0.05), (std::vector<std::size_t>(5, 1)));
}

TEST(Resample, OutputUniformAndUniformInputSkipped) {
  FilterConfig cfg;
  cfg.num_particles = 10;
  BeliefState b = init_particles({50, 50, 0}, cfg);
  EXPECT_NEAR(effective_sample_size(b.particles), 10.0, 1e-12);
  const StepDiagnostics d = update_with_similarities(b, std::vector<double>(10, 0.3), cfg);
  EXPECT_FALSE(d.resampled);
  Rng rng(16);
  BeliefState r = random_belief(rng, 10);
  resample(r, cfg);
  for (const auto& p : r.particles) {
    EXPECT_DOUBLE_EQ(p.weight, 0.1);
  }
}

TEST(Resample, Unbiased) {
  const std::vector<double> w{0.05, 0.4, 0.13, 0.22, 0.2};
  const std::size_t m = w.size();
  const int runs = 10000;
  std::vector<double> sum(m, 0.0);
  std::vector<double> sum2(m, 0.0);
  for (int r = 0; r < runs; ++r) {
    std::vector<Particle> ps;
    for (std::size_t i = 0; i < m; ++i) {
      ps.push_back({{static_cast<double>(i), 0, 0}, w[i]});
    }
    BeliefState b = belief_of(ps);
    FilterConfig cfg;
    cfg.rng_seed = static_cast<std::uint64_t>(r);
    resample(b, cfg);
    std::vector<double> count(m, 0.0);
    for (const auto& p : b.particles) {
      count[static_cast<std::size_t>(p.pose.x)] += 1.0;
    }
    for (std::size_t i = 0; i < m; ++i) {
      sum[i] += count[i];
      sum2[i] += count[i] * count[i];
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double mean = sum[i] / runs;
    const double var = std::max(sum2[i] / runs - mean * mean, 0.0);
    const double se = std::sqrt(var / runs);
    EXPECT_LE(std::abs(mean - static_cast<double>(m) * w[i]), 3.0 * se + 1e-12) << "particle " << i;
  }
}

TEST(Estimate, Examples) {
  BeliefState b = belief_of({{{0, 0, 0}, 0.5}, {{2, 0, 0}, 0.5}});
  Pose e = estimate_pose(b);
  EXPECT_NEAR(e.x, 1.0, 1e-15);
  EXPECT_NEAR(e.y, 0.0, 1e-15);
  EXPECT_NEAR(e.theta, 0.0, 1e-15);
  b = belief_of({{{0, 0, 0}, 0.75}, {{4, 0, 0}, 0.25}});
  EXPECT_NEAR(estimate_pose(b).x, 1.0, 1e-15);
  b = belief_of({{{0, 0, 0}, 0.0}, {{4, 3, 1.2}, 1.0}});
  e = estimate_pose(b);
  EXPECT_EQ(e.x, 4.0);
  EXPECT_EQ(e.y, 3.0);
  EXPECT_NEAR(e.theta, 1.2, 1e-12);
  b = belief_of({{{0, 0, 0}, 0.5}, {{0, 0, kPi}, 0.5}});
  b.last_estimate.theta = 0.7;
  EXPECT_DOUBLE_EQ(estimate_pose(b).theta, 0.7);
}

TEST(Step, DeadReckoningLeavesWeights) {
  Rng rng(17);
  BeliefState b = random_belief(rng, 30);
  std::vector<double> before;
  for (const auto& p : b.particles) {
    before.push_back(p.weight);
  }
  const auto [est, d] = step(b, {1.0, 0.1}, nullptr, nullptr, FilterConfig{});
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(b.particles[i].weight, before[i]);
  }
  EXPECT_FALSE(d.resampled);
}

TEST(Localization, Deterministic) {
  const WorldModel world = build_world(WorldConfig{});
  TrajectoryConfig tc;
  tc.length = 40.0;
  const Trajectory gt = generate_trajectory(world, tc, 3);
  EncoderParams enc(EncoderConfig{}, 4);
  LocalizationConfig cfg;
  cfg.filter.num_particles = 50;
  const NeuralObservationModel model(world, enc, nullptr, cfg.observation);
  const auto a = run_localization(world, gt, &model, cfg, 9);
  const auto b = run_localization(world, gt, &model, cfg, 9);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  ASSERT_GT(a.rows.size(), 5u);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].pose.x, b.rows[i].pose.x);
    EXPECT_EQ(a.rows[i].pose.y, b.rows[i].pose.y);
    EXPECT_EQ(a.rows[i].entropy, b.rows[i].entropy);
  }
}

TEST(Odometry, NoiseFreeMatchesTruth) {
  const WorldModel world = build_world(WorldConfig{});
  TrajectoryConfig tc;
  tc.length = 50.0;
  const Trajectory gt = generate_trajectory(world, tc, 5);
  const auto odo = simulate_odometry(gt, {0.0, 0.0, 0.0, 0.0}, 1);
  ASSERT_EQ(odo.size() + 1, gt.size());
  double total = 0.0;
  for (const auto& u : odo) {
    total += u.delta_d;
  }
  EXPECT_NEAR(total, gt.arc_length(), 1e-9);
}
