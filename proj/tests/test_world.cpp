#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "xvloc/world.hpp"

using namespace xvloc;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) {
      ++j;
    }
    for (std::size_t k = i; k <= j; ++k) {
      r[idx[k]] = 0.5 * static_cast<double>(i + j);
    }
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) { return pearson(ranks(a), ranks(b)); }

const WorldModel& shared_world() {
  static const WorldModel w = build_world(WorldConfig{});
  return w;
}

}  // namespace

TEST(BuildWorld, Deterministic) {
  const WorldModel a = build_world(7, 500.0, 3);
  const WorldModel b = build_world(7, 500.0, 3);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform(0.0, 500.0);
    const double y = rng.uniform(0.0, 500.0);
    EXPECT_EQ(a.structure(x, y), b.structure(x, y));
    for (int s = 0; s < 3; ++s) {
      EXPECT_EQ(a.appearance({s}, x, y), b.appearance({s}, x, y));
    }
  }
}

TEST(BuildWorld, SeasonCount) {
  EXPECT_EQ(build_world(7, 500.0, 1).season_transforms().size(), 1u);
  EXPECT_THROW(build_world(7, 500.0, 0), ConfigError);
  EXPECT_THROW(build_world(7, 50.0, 2), ConfigError);
}

TEST(BuildWorld, SeedsDifferAndFieldIsDiscriminative) {
  const WorldModel a = build_world(7, 500.0, 2);
  const WorldModel b = build_world(8, 500.0, 2);
  Rng rng(2);
  int differ = 0;
  std::vector<double> v;
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform(0.0, 500.0);
    const double y = rng.uniform(0.0, 500.0);
    differ += a.structure(x, y) != b.structure(x, y);
    v.push_back(a.structure(x, y));
  }
  EXPECT_GE(differ, 1);
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / 100.0;
  double var = 0.0;
  for (double s : v) {
    var += (s - m) * (s - m) / 100.0;
  }
  EXPECT_GT(var, 1e-3);
}

TEST(BuildWorld, SeasonTransformsDifferPairwise) {
  const auto& ts = shared_world().season_transforms();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    for (std::size_t j = i + 1; j < ts.size(); ++j) {
      EXPECT_TRUE(ts[i].tone.gamma != ts[j].tone.gamma || ts[i].noise_seed != ts[j].noise_seed);
    }
  }
}

TEST(AerialPatch, PixelSizeAndRange) {
  const auto p = render_aerial_patch(shared_world(), {300, 300, 0.3}, {0}, 20.0, 32);
  EXPECT_DOUBLE_EQ(p.meters_per_pixel, 0.625);
  for (double v : p.pixels) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(AerialPatch, ZeroHeadingIsAxisAligned) {
  const WorldModel& w = shared_world();
  const Pose pose{250.0, 310.0, 0.0};
  const auto p = render_aerial_patch(w, pose, {1}, 20.0, 16);
  // Heading east points up: row r runs along +x reversed, col c along -y.
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 16; ++c) {
      const double x = pose.x + (8.0 - (r + 0.5)) * 1.25;
      const double y = pose.y - (c + 0.5 - 8.0) * 1.25;
      EXPECT_NEAR(p.at(r, c), w.appearance({1}, x, y), 1e-12);
    }
  }
}

TEST(AerialPatch, OutOfBoundsThrows) {
  EXPECT_THROW(render_aerial_patch(shared_world(), {5, 5, 0}, {0}, 20.0, 32), OutOfBoundsError);
}

TEST(AerialPatch, HeadingEquivariance) {
  const WorldModel& w = shared_world();
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Pose pose{rng.uniform(100, 500), rng.uniform(100, 500), rng.uniform(-kPi, kPi)};
    const Pose turned{pose.x, pose.y, wrap_angle(pose.theta + 0.5 * kPi)};
    const auto a = render_aerial_patch(w, pose, {0}, 20.0, 32);
    const auto b = render_aerial_patch(w, turned, {0}, 20.0, 32);
    double mad = 0.0;
    for (int r = 0; r < 32; ++r) {
      for (int c = 0; c < 32; ++c) {
        mad += std::abs(b.at(r, c) - a.at(31 - c, r));
      }
    }
    EXPECT_LT(mad / (32.0 * 32.0), 0.02);
  }
}

TEST(AerialPatch, StructureSurvivesSeasons) {
  const WorldModel& w = shared_world();
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Pose pose{rng.uniform(100, 500), rng.uniform(100, 500), rng.uniform(-kPi, kPi)};
    const auto s = render_structure_patch(w, pose, 20.0, 32);
    for (int tau = 0; tau < w.num_seasons(); ++tau) {
      const auto a = render_aerial_patch(w, pose, {tau}, 20.0, 32);
      const ToneCurve& tone = w.season_transforms()[static_cast<std::size_t>(tau)].tone;
      std::vector<double> inv;
      for (double v : a.pixels) {
        inv.push_back(tone.invert(v));
      }
      EXPECT_GT(pearson(inv, s.pixels), 0.9) << "season " << tau;
    }
    const auto s0 = render_aerial_patch(w, pose, {0}, 20.0, 32);
    const auto s1 = render_aerial_patch(w, pose, {1}, 20.0, 32);
    EXPECT_NE(s0.pixels, s1.pixels);
  }
}

TEST(AerialPatch, SeasonPersistenceBeatsDistantPlaces) {
  const WorldModel& w = shared_world();
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose pose{rng.uniform(100, 500), rng.uniform(100, 500), rng.uniform(-kPi, kPi)};
    const double ang = rng.uniform(-kPi, kPi);
    const double d = rng.uniform(30.0, 60.0);
    const Pose far{pose.x + d * std::cos(ang), pose.y + d * std::sin(ang), pose.theta};
    const int t1 = static_cast<int>(rng.index(4));
    const int t2 = (t1 + 1 + static_cast<int>(rng.index(3))) % 4;
    const auto a = render_aerial_patch(w, pose, {t1}, 20.0, 32);
    const auto b = render_aerial_patch(w, pose, {t2}, 20.0, 32);
    const auto c = render_aerial_patch(w, far, {t1}, 20.0, 32);
    EXPECT_GT(spearman(a.pixels, b.pixels), spearman(a.pixels, c.pixels));
  }
}

TEST(GroundClip, DeterministicAndAligned) {
  const WorldModel& w = shared_world();
  const std::vector<StampedPose> poses{{0.0, {300, 300, 0.2}}, {0.1, {301, 300, 0.2}}, {0.2, {302, 300, 0.2}}};
  const auto a = render_ground_clip(w, poses, {0}, 0.05, 9);
  const auto b = render_ground_clip(w, poses, {0}, 0.05, 9);
  ASSERT_EQ(a.frames.size(), 3u);
  ASSERT_EQ(a.frame_poses.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.frames[i].pixels, b.frames[i].pixels);
    EXPECT_EQ(a.frame_poses[i].pose, poses[i].pose);
  }
  const std::vector<StampedPose> same{{0.0, {300, 300, 0.2}}, {0.1, {300, 300, 0.2}}};
  const auto c = render_ground_clip(w, same, {0}, 0.0, 9);
  EXPECT_EQ(c.frames[0].pixels, c.frames[1].pixels);
  EXPECT_THROW(render_ground_clip(w, {}, {0}, 0.0, 9), ConfigError);
}

TEST(GroundClip, NearbyFramesCorrelateMore) {
  const WorldModel& w = shared_world();
  Rng rng(6);
  int wins = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Pose p{rng.uniform(150, 450), rng.uniform(150, 450), rng.uniform(-kPi, kPi)};
    const Pose near{p.x + std::cos(p.theta), p.y + std::sin(p.theta), p.theta};
    const Pose far{p.x + 50.0 * std::cos(p.theta + 1.0), p.y + 50.0 * std::sin(p.theta + 1.0), p.theta};
    const auto clip = render_ground_clip(w, {{0.0, p}, {0.1, near}, {0.2, far}}, {0}, 0.0, 1);
    wins += pearson(clip.frames[0].pixels, clip.frames[1].pixels) > pearson(clip.frames[0].pixels, clip.frames[2].pixels);
  }
  EXPECT_EQ(wins, 20);
}

TEST(Trajectory, ConstantSpeedSpacing) {
  TrajectoryConfig cfg;
  cfg.speed_min = cfg.speed_max = 1.0;
  cfg.length = 100.0;
  const Trajectory t = generate_trajectory(shared_world(), cfg, 3);
  for (std::size_t i = 1; i < t.size(); ++i) {
    EXPECT_NEAR(distance(t[i - 1].pose, t[i].pose), 0.1, 1e-3);
    EXPECT_NEAR(t[i].t - t[i - 1].t, 0.1, 1e-9);
  }
}

TEST(Trajectory, LengthBoundsAndDeterminism) {
  TrajectoryConfig cfg;
  const WorldModel& w = shared_world();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Trajectory t = generate_trajectory(w, cfg, seed);
    EXPECT_GE(t.arc_length(), 495.0);
    EXPECT_LE(t.arc_length(), 505.0);
    for (const auto& p : t) {
      EXPECT_TRUE(w.contains(p.pose.x, p.pose.y));
    }
    const Trajectory u = generate_trajectory(w, cfg, seed);
    ASSERT_EQ(t.size(), u.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      EXPECT_EQ(t[i].pose, u[i].pose);
    }
  }
}

TEST(Trajectory, InvalidConfig) {
  TrajectoryConfig cfg;
  cfg.dt = 0.0;
  EXPECT_THROW(generate_trajectory(shared_world(), cfg, 1), ConfigError);
  cfg = {};
  cfg.speed_min = 3.0;
  cfg.speed_max = 2.0;
  EXPECT_THROW(generate_trajectory(shared_world(), cfg, 1), ConfigError);
}

TEST(Augmentation, IdentityAndBrightness) {
  const auto p = render_aerial_patch(shared_world(), {300, 300, 1.0}, {0}, 20.0, 32);
  EXPECT_EQ(apply_augmentation(p, AugmentationParams{}).pixels, p.pixels);
  ImagePatch flat(8, 8, 1.0, 0.25);
  AugmentationParams bright;
  bright.brightness_scale = 2.0;
  for (double v : apply_augmentation(flat, bright).pixels) {
    EXPECT_DOUBLE_EQ(v, 0.5);
  }
}

TEST(Augmentation, ClipFramesShareParams) {
  const WorldModel& w = shared_world();
  std::vector<StampedPose> poses;
  for (int i = 0; i < 4; ++i) {
    poses.push_back({0.1 * i, {300.0 + i, 300.0, 0.0}});
  }
  const auto clip = render_ground_clip(w, poses, {0}, 0.0, 2);
  AugmentationParams p;
  p.crop_fraction = 0.9;
  p.crop_offset = {1.0, -1.0};
  p.contrast_scale = 1.1;
  const auto out = apply_augmentation(clip, p);
  ASSERT_EQ(out.frames.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(out.frames[i].pixels, apply_augmentation(clip.frames[i], p).pixels);
  }
  AugmentationParams bad;
  bad.crop_fraction = 0.5;
  EXPECT_THROW(apply_augmentation(clip.frames[0], bad), ConfigError);
}
