#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "xvloc/pipeline.hpp"

using namespace xvloc;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.trajectory.length = 60.0;
  c.model.train_trajectories = 2;
  c.training.max_epochs_stage1 = 2;
  c.training.max_epochs_stage2 = 2;
  c.training.anchor_spacing = 10.0;
  c.filter.num_particles = 40;
  return c;
}

}  // namespace

TEST(Checkpoint, RoundTripAndRejection) {
  Model m{EncoderParams(EncoderConfig{}, 3), make_quality_mlp(64, 0.25, 4), {}, {}};
  const fs::path p = fs::temp_directory_path() / "xvloc_ckpt_test.json";
  save_model(p.string(), m);
  const Model back = load_model(p.string());
  EXPECT_TRUE(back.encoder == m.encoder);
  ASSERT_TRUE(back.quality.has_value());
  EXPECT_EQ(back.quality->flat(), m.quality->flat());

  auto j = to_json(m);
  j["magic"] = "other";
  EXPECT_THROW(model_from_json(j), ConfigError);
  j = to_json(m);
  j["version"] = 99;
  EXPECT_THROW(model_from_json(j), ConfigError);
  j = to_json(m);
  j["quality"] = nn::to_json(make_quality_mlp(8, 0.25, 4));
  EXPECT_THROW(model_from_json(j), ShapeError);
  fs::remove(p);
}

TEST(TrajectoryCsv, RoundTripIsExact) {
  const WorldModel world = build_world(WorldConfig{});
  const Trajectory t = generate_trajectory(world, TrajectoryConfig{}, 8);
  std::stringstream ss;
  write_trajectory_csv(ss, t);
  const Trajectory back = read_trajectory_csv(ss);
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(back[i].t, t[i].t);
    EXPECT_EQ(back[i].pose.x, t[i].pose.x);
    EXPECT_EQ(back[i].pose.theta, t[i].pose.theta);
  }
}

TEST(TrainingTrajectories, DeterministicAndSeedDependent) {
  const RunConfig c = tiny_config();
  const WorldModel world = build_world(c.world);
  const auto a = training_trajectories(world, c);
  const auto b = training_trajectories(world, c);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].back().pose.x, b[0].back().pose.x);
  EXPECT_NE(a[0].front().pose.x, a[1].front().pose.x);
}

TEST(Pipeline, OutputsAreConsistentAndReproducible) {
  const RunConfig c = tiny_config();
  const WorldModel world = build_world(c.world);
  const Model m = train_model(world, c);
  EXPECT_EQ(static_cast<int>(m.stage1_curve.size()), 2);
  ASSERT_TRUE(m.quality.has_value());
  const Trajectory gt = generate_trajectory(world, c.trajectory, 77);

  const auto run = [&] {
    const LocalizationResult r = localize(world, gt, m, c, 5);
    std::stringstream est;
    write_estimates_csv(est, r);
    return std::make_pair(est.str(), diagnostics_json(r).dump());
  };
  const auto first = run();
  const auto second = run();
  EXPECT_EQ(first, second);

  std::stringstream est(first.first);
  std::string header;
  std::getline(est, header);
  EXPECT_EQ(header, "t,x,y,theta,H_t,lambda_t,ess");
  est.seekg(0);
  const Trajectory pred = read_trajectory_csv(est);
  const MetricsReport rep = evaluate(pred, gt);
  EXPECT_EQ(rep.n_frames, pred.size());
  EXPECT_EQ(nlohmann::json::parse(first.second).size() + 1, pred.size());

  std::stringstream curve;
  write_curve_csv(curve, m.stage2_curve);
  std::getline(curve, header);
  EXPECT_EQ(header, "epoch,train_loss,val_loss,lr");
}
