#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xvloc/core.hpp"
#include "xvloc/encoder.hpp"
#include "xvloc/frame_sampler.hpp"
#include "xvloc/world.hpp"

namespace xvloc {

/// Sink for non-fatal diagnostics; defaults to stderr.
inline std::function<void(const std::string&)>& warning_sink() {
  static std::function<void(const std::string&)> sink = [](const std::string& msg) {
    std::clog << "warning: " << msg << '\n';
  };
  return sink;
}

inline void log_warning(const std::string& msg) {
  if (warning_sink()) {
    warning_sink()(msg);
  }
}

struct MiningConfig {
  double d_min{5.0};
  double d_max{40.0};
  double delta_theta{deg2rad(30.0)};
  int num_candidates{32};
  int num_negatives_per_anchor{4};
};

inline void validate(const MiningConfig& cfg) {
  if (!(cfg.d_min > 0.0) || !(cfg.d_max > cfg.d_min) || !(cfg.delta_theta > 0.0) || !(cfg.delta_theta < kPi) ||
      cfg.num_candidates < 1 || cfg.num_negatives_per_anchor < 1) {
    throw ConfigError("MiningConfig: need 0 < d_min < d_max, 0 < delta_theta < pi, positive counts");
  }
}

struct PositiveCandidate {
  Embedding embedding;
  SeasonId season;
};

struct PoolEntry {
  Embedding embedding;
  Pose pose;
};

/// Index of the same-place candidate furthest from the anchor in embedding
/// space; ties go to the lowest season index.
inline std::size_t select_hard_positive(const Embedding& anchor, std::span<const PositiveCandidate> candidates) {
  if (candidates.empty()) {
    throw ConfigError("select_hard_positive: no candidates");
  }
  std::size_t best = 0;
  double best_d = (anchor - candidates[0].embedding).norm();
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double d = (anchor - candidates[i].embedding).norm();
    if (d > best_d || (d == best_d && candidates[i].season.tau < candidates[best].season.tau)) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

/// Spatial annulus and heading-difference constraints for a negative.
inline bool satisfies_negative_constraints(const Pose& anchor, const Pose& candidate, const MiningConfig& cfg) {
  const double d = distance(anchor, candidate);
  return d >= cfg.d_min && d <= cfg.d_max && std::abs(ang_diff(anchor.theta, candidate.theta)) > cfg.delta_theta;
}

/// Up to k constraint-valid pool entries closest to the anchor in embedding
/// space (ties by pool index). Empty when nothing survives.
inline std::vector<std::size_t> select_hard_negatives(const Embedding& anchor, const Pose& anchor_pose,
                                                      std::span<const PoolEntry> pool, SeasonId season,
                                                      const MiningConfig& cfg) {
  validate(cfg);
  std::vector<std::pair<double, std::size_t>> survivors;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (satisfies_negative_constraints(anchor_pose, pool[i].pose, cfg)) {
      survivors.emplace_back((anchor - pool[i].embedding).norm(), i);
    }
  }
  if (survivors.empty()) {
    log_warning("select_hard_negatives: no constraint-valid negatives in season " + std::to_string(season.tau) +
                "; anchor skipped");
    return {};
  }
  std::sort(survivors.begin(), survivors.end());
  const std::size_t k = std::min(survivors.size(), static_cast<std::size_t>(cfg.num_negatives_per_anchor));
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    out.push_back(survivors[i].second);
  }
  return out;
}

/// Uniform-area draw in the annulus with a heading that differs by more than
/// delta_theta; rejects footprints that leave the world.
inline std::optional<Pose> sample_negative_pose(const WorldModel& world, const Pose& anchor, const MiningConfig& cfg,
                                                double patch_side, Rng& rng) {
  constexpr int kTries = 64;
  for (int i = 0; i < kTries; ++i) {
    const double r = std::sqrt(rng.uniform(cfg.d_min * cfg.d_min, cfg.d_max * cfg.d_max));
    const double bearing = rng.uniform(-kPi, kPi);
    const double turn = rng.uniform(cfg.delta_theta, kPi) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    const Pose p{anchor.x + r * std::cos(bearing), anchor.y + r * std::sin(bearing), wrap_angle(anchor.theta + turn)};
    if (satisfies_negative_constraints(anchor, p, cfg) && aerial_footprint_inside(world, p, patch_side)) {
      return p;
    }
  }
  return std::nullopt;
}

/// Where anchors and aerial samples come from.
struct TripletSourceConfig {
  CameraConfig camera;
  SeasonId ground_season{0};
  double ground_noise{0.02};
  std::vector<SeasonId> aerial_seasons{{0}, {1}, {2}};
  double patch_side{20.0};
  int patch_resolution{32};
  std::optional<SamplerConfig> clip;  // nullopt: single-frame anchors
  bool augment{true};
  AugmentationRanges augmentation;
};

struct AerialSample {
  ImagePatch patch;
  Pose pose;
  SeasonId season;
};

struct Triplet {
  GroundClip anchor;
  Pose anchor_pose;
  AerialSample positive;
  std::vector<AerialSample> negatives;  // all in positive.season
  AugmentationParams shared_augmentation;
  AugmentationParams clip_augmentation;
};

/// Everything rendered for one anchor before mining: positive candidates
/// (one per aerial season) and a negative pool rendered in every aerial season.
struct AnchorPool {
  std::size_t trajectory_index{0};
  Pose anchor_pose;
  GroundClip anchor;
  std::vector<SeasonId> seasons;
  std::vector<ImagePatch> positive_candidates;         // [season]
  std::vector<Pose> negative_poses;                    // [candidate]
  std::vector<std::vector<ImagePatch>> negative_patches;  // [season][candidate]
  AugmentationParams shared_augmentation;
  AugmentationParams clip_augmentation;
};

/// True when the anchor and all its clip frames can be rendered.
inline bool anchor_renderable(const WorldModel& world, const Pose& pose, const TripletSourceConfig& src) {
  return ground_footprint_inside(world, pose, src.camera) && aerial_footprint_inside(world, pose, src.patch_side);
}

/// Renders the anchor clip and all candidates for trajectory pose `index`.
/// Returns nullopt when no negative pose could be placed.
inline std::optional<AnchorPool> sample_anchor_pool(const WorldModel& world, const Trajectory& trajectory,
                                                    std::size_t index, const TripletSourceConfig& src,
                                                    const MiningConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  if (src.aerial_seasons.empty()) {
    throw ConfigError("TripletSourceConfig: no aerial seasons");
  }
  Rng rng(seed);
  AnchorPool pool;
  pool.trajectory_index = index;
  pool.anchor_pose = trajectory[index].pose;
  pool.seasons = src.aerial_seasons;

  std::vector<StampedPose> frame_poses;
  if (src.clip) {
    std::vector<double> times;
    times.reserve(index + 1);
    for (std::size_t i = 0; i <= index; ++i) {
      times.push_back(trajectory[i].t);
    }
    const auto picked = select_clip_frames(std::span(trajectory.poses()).first(index + 1), times, trajectory[index].t, *src.clip);
    for (std::size_t k : picked) {
      frame_poses.push_back(trajectory[k]);
    }
  } else {
    frame_poses.push_back(trajectory[index]);
  }
  if (src.augment) {
    pool.clip_augmentation = sample_augmentation(rng, src.augmentation);
    pool.shared_augmentation = sample_augmentation(rng, src.augmentation);
  }
  const std::uint64_t noise_seed = rng.next();
  pool.anchor = apply_augmentation(
      render_ground_clip(world, frame_poses, src.ground_season, src.ground_noise, noise_seed, src.camera),
      pool.clip_augmentation);

  for (const SeasonId s : src.aerial_seasons) {
    pool.positive_candidates.push_back(apply_augmentation(
        render_aerial_patch(world, pool.anchor_pose, s, src.patch_side, src.patch_resolution), pool.shared_augmentation));
  }
  for (int c = 0; c < cfg.num_candidates; ++c) {
    if (auto p = sample_negative_pose(world, pool.anchor_pose, cfg, src.patch_side, rng)) {
      pool.negative_poses.push_back(*p);
    }
  }
  if (pool.negative_poses.empty()) {
    return std::nullopt;
  }
  for (const SeasonId s : src.aerial_seasons) {
    std::vector<ImagePatch> patches;
    patches.reserve(pool.negative_poses.size());
    for (const Pose& p : pool.negative_poses) {
      patches.push_back(
          apply_augmentation(render_aerial_patch(world, p, s, src.patch_side, src.patch_resolution), pool.shared_augmentation));
    }
    pool.negative_patches.push_back(std::move(patches));
  }
  return pool;
}

/// Trajectory indices usable as anchors: renderable and, for clip anchors,
/// at least one sampler window into the drive.
inline std::vector<std::size_t> anchor_candidates(const WorldModel& world, const Trajectory& trajectory,
                                                  const TripletSourceConfig& src) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    if (src.clip && trajectory[i].t - trajectory.front().t < src.clip->t_max) {
      continue;
    }
    if (anchor_renderable(world, trajectory[i].pose, src)) {
      out.push_back(i);
    }
  }
  return out;
}

/// Mines one triplet from a rendered pool with the given encoder. The anchor
/// embedding is the latest clip frame.
inline std::optional<Triplet> mine_triplet(const AnchorPool& pool, const EncoderParams& encoder, const MiningConfig& cfg) {
  const Embedding anchor = encode(encoder, pool.anchor.frames.back(), Branch::ground);
  std::vector<PositiveCandidate> positives;
  for (std::size_t s = 0; s < pool.seasons.size(); ++s) {
    positives.push_back({encode(encoder, pool.positive_candidates[s], Branch::aerial), pool.seasons[s]});
  }
  const std::size_t ps = select_hard_positive(anchor, positives);
  std::vector<PoolEntry> entries;
  for (std::size_t c = 0; c < pool.negative_poses.size(); ++c) {
    entries.push_back({encode(encoder, pool.negative_patches[ps][c], Branch::aerial), pool.negative_poses[c]});
  }
  const auto negs = select_hard_negatives(anchor, pool.anchor_pose, entries, pool.seasons[ps], cfg);
  if (negs.empty()) {
    return std::nullopt;
  }
  Triplet t;
  t.anchor = pool.anchor;
  t.anchor_pose = pool.anchor_pose;
  t.positive = {pool.positive_candidates[ps], pool.anchor_pose, pool.seasons[ps]};
  for (std::size_t k : negs) {
    t.negatives.push_back({pool.negative_patches[ps][k], pool.negative_poses[k], pool.seasons[ps]});
  }
  t.shared_augmentation = pool.shared_augmentation;
  t.clip_augmentation = pool.clip_augmentation;
  return t;
}

/// Builds up to `batch` triplets from anchors drawn along the trajectory.
/// Anchor k uses its own stream derived from (rng_seed, k); anchors without
/// valid negatives are dropped.
inline std::vector<Triplet> build_triplet_batch(const WorldModel& world, const Trajectory& trajectory,
                                                const EncoderParams& encoder, const MiningConfig& cfg,
                                                const TripletSourceConfig& src, std::size_t batch,
                                                std::uint64_t rng_seed) {
  validate(cfg);
  const auto usable = anchor_candidates(world, trajectory, src);
  if (usable.empty()) {
    throw ConfigError("build_triplet_batch: no renderable anchors on the trajectory");
  }
  Rng pick(derive_seed(rng_seed, 0x414eu));
  std::vector<Triplet> out;
  out.reserve(batch);
  for (std::size_t k = 0; k < batch; ++k) {
    const std::size_t index = usable[pick.index(usable.size())];
    const auto pool = sample_anchor_pool(world, trajectory, index, src, cfg, derive_seed(rng_seed, k));
    if (!pool) {
      log_warning("build_triplet_batch: anchor " + std::to_string(index) + " has no negative pool; dropped");
      continue;
    }
    if (auto t = mine_triplet(*pool, encoder, cfg)) {
      out.push_back(std::move(*t));
    }
  }
  return out;
}

}  // namespace xvloc
