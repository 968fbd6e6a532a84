#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "xvloc/aggregation.hpp"
#include "xvloc/core.hpp"
#include "xvloc/encoder.hpp"
#include "xvloc/frame_sampler.hpp"
#include "xvloc/training.hpp"
#include "xvloc/world.hpp"

namespace xvloc {

enum class KdeBandwidthMode { scott, fixed };

/// Motion noise standard deviations: proportional terms plus per-call floors.
struct MotionNoise {
  double trans_per_m{0.3};
  double rot_per_rad{0.05};
  double trans_min{0.01};
  double rot_min{0.004};
};

struct FilterConfig {
  int num_particles{300};
  double init_sigma_xy{2.0};
  double init_sigma_theta{0.05};
  MotionNoise motion;
  double lambda_base{20.0};
  double gamma{0.05};
  KdeBandwidthMode kde_bandwidth_mode{KdeBandwidthMode::scott};
  double kde_fixed_h{1.0};
  double kde_h_floor{0.5};
  double kde_grid_resolution{1.0};
  double kde_pad{3.0};  // grid padding around the particle bounding box, in bandwidths
  double ess_threshold_fraction{0.5};
  std::uint64_t rng_seed{1};
};

inline void validate(const FilterConfig& cfg) {
  if (cfg.num_particles < 2) {
    throw ConfigError("FilterConfig: need at least 2 particles");
  }
  const auto& m = cfg.motion;
  if (cfg.init_sigma_xy < 0.0 || cfg.init_sigma_theta < 0.0 || m.trans_per_m < 0.0 || m.rot_per_rad < 0.0 ||
      m.trans_min < 0.0 || m.rot_min < 0.0) {
    throw ConfigError("FilterConfig: sigmas must be >= 0");
  }
  if (!(cfg.lambda_base > 0.0) || cfg.gamma < 0.0 || !(cfg.kde_grid_resolution > 0.0) || !(cfg.kde_pad > 0.0) ||
      cfg.kde_h_floor < 0.0 || (cfg.kde_bandwidth_mode == KdeBandwidthMode::fixed && !(cfg.kde_fixed_h > 0.0)) ||
      cfg.ess_threshold_fraction < 0.0 || cfg.ess_threshold_fraction > 1.0) {
    throw ConfigError("FilterConfig: value out of range");
  }
}

struct Particle {
  Pose pose;
  double weight{0.0};
};

struct BeliefState {
  std::vector<Particle> particles;
  double last_entropy{0.0};
  double last_lambda{0.0};
  std::uint64_t step{0};
  Pose last_estimate;
};

namespace detail {

enum Stage : std::uint64_t { kStageInit = 0, kStagePredict = 1, kStageResample = 2, kStageRender = 3 };

inline void normalize_weights(std::vector<Particle>& ps) {
  double total = 0.0;
  for (const auto& p : ps) {
    total += p.weight;
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    const double u = 1.0 / static_cast<double>(ps.size());
    for (auto& p : ps) {
      p.weight = u;
    }
    return;
  }
  for (auto& p : ps) {
    p.weight /= total;
  }
}

}  // namespace detail

inline BeliefState init_particles(const Pose& prior, const FilterConfig& cfg) {
  validate(cfg);
  Rng rng(derive_seed(cfg.rng_seed, 0, detail::kStageInit));
  BeliefState b;
  const auto m = static_cast<std::size_t>(cfg.num_particles);
  b.particles.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    Pose p;
    p.x = rng.normal(prior.x, cfg.init_sigma_xy);
    p.y = rng.normal(prior.y, cfg.init_sigma_xy);
    p.theta = wrap_angle(rng.normal(prior.theta, cfg.init_sigma_theta));
    b.particles.push_back({p, 1.0 / static_cast<double>(m)});
  }
  b.last_lambda = cfg.lambda_base;
  b.last_estimate = prior;
  return b;
}

/// Applies one odometry increment (delta_d meters, delta_theta radians) with
/// rotation first, then translation along the new heading. Advances the step
/// counter that keys the random streams.
inline void predict(BeliefState& belief, double delta_d, double delta_theta, const FilterConfig& cfg) {
  if (!std::isfinite(delta_d) || !std::isfinite(delta_theta)) {
    throw DomainError("predict: non-finite control");
  }
  ++belief.step;
  Rng rng(derive_seed(cfg.rng_seed, belief.step, detail::kStagePredict));
  const double sd_trans = cfg.motion.trans_per_m * std::abs(delta_d) + cfg.motion.trans_min;
  const double sd_rot = cfg.motion.rot_per_rad * std::abs(delta_theta) + cfg.motion.rot_min;
  for (auto& p : belief.particles) {
    const double th = wrap_angle(p.pose.theta + delta_theta + rng.normal(0.0, sd_rot));
    const double d = delta_d + rng.normal(0.0, sd_trans);
    p.pose.x += d * std::cos(th);
    p.pose.y += d * std::sin(th);
    p.pose.theta = th;
  }
}

// ---------------------------------------------------------------------------
// KDE spatial entropy

/// Weighted Gaussian KDE of particle positions evaluated at cell centers and
/// normalized to unit mass. Cell (i, j) is at (x0 + (i + 0.5) res, y0 + (j + 0.5) res).
struct KdeGrid {
  double x0{0.0};
  double y0{0.0};
  double resolution{1.0};
  int nx{0};
  int ny{0};
  double bandwidth{1.0};
  std::vector<double> mass;  // row-major over j then i: mass[j * nx + i]
};

inline double effective_sample_size(std::span<const Particle> ps) {
  double s = 0.0;
  for (const auto& p : ps) {
    s += p.weight * p.weight;
  }
  return 1.0 / s;
}

/// Scott's rule on the weighted positional scatter, or the fixed bandwidth.
inline double kde_bandwidth(std::span<const Particle> ps, const FilterConfig& cfg) {
  if (cfg.kde_bandwidth_mode == KdeBandwidthMode::fixed) {
    return cfg.kde_fixed_h;
  }
  double mx = 0.0;
  double my = 0.0;
  for (const auto& p : ps) {
    mx += p.weight * p.pose.x;
    my += p.weight * p.pose.y;
  }
  double var = 0.0;
  for (const auto& p : ps) {
    var += p.weight * (std::pow(p.pose.x - mx, 2) + std::pow(p.pose.y - my, 2));
  }
  const double sigma = std::sqrt(0.5 * var);
  const double h = sigma * std::pow(effective_sample_size(ps), -1.0 / 6.0);
  return std::max({h, cfg.kde_h_floor, 0.25 * cfg.kde_grid_resolution});
}

inline KdeGrid kde_grid(std::span<const Particle> ps, const FilterConfig& cfg) {
  if (ps.empty()) {
    throw ConfigError("kde_grid: no particles");
  }
  KdeGrid g;
  g.bandwidth = kde_bandwidth(ps, cfg);
  double lo_x = ps[0].pose.x;
  double hi_x = lo_x;
  double lo_y = ps[0].pose.y;
  double hi_y = lo_y;
  for (const auto& p : ps) {
    lo_x = std::min(lo_x, p.pose.x);
    hi_x = std::max(hi_x, p.pose.x);
    lo_y = std::min(lo_y, p.pose.y);
    hi_y = std::max(hi_y, p.pose.y);
  }
  const double pad = cfg.kde_pad * g.bandwidth;
  g.resolution = cfg.kde_grid_resolution;
  // Very spread beliefs coarsen the grid rather than allocate without bound.
  constexpr double kMaxCells = 1 << 20;
  while (((hi_x - lo_x + 2 * pad) / g.resolution) * ((hi_y - lo_y + 2 * pad) / g.resolution) > kMaxCells) {
    g.resolution *= 2.0;
  }
  g.x0 = lo_x - pad;
  g.y0 = lo_y - pad;
  g.nx = std::max(1, static_cast<int>(std::ceil((hi_x - lo_x + 2 * pad) / g.resolution - 1e-9)));
  g.ny = std::max(1, static_cast<int>(std::ceil((hi_y - lo_y + 2 * pad) / g.resolution - 1e-9)));
  g.mass.assign(static_cast<std::size_t>(g.nx) * static_cast<std::size_t>(g.ny), 0.0);

  const double inv2h2 = 1.0 / (2.0 * g.bandwidth * g.bandwidth);
  std::vector<double> kx(static_cast<std::size_t>(g.nx));
  std::vector<double> ky(static_cast<std::size_t>(g.ny));
  for (const auto& p : ps) {
    if (p.weight <= 0.0) {
      continue;
    }
    for (int i = 0; i < g.nx; ++i) {
      const double dx = g.x0 + (i + 0.5) * g.resolution - p.pose.x;
      kx[static_cast<std::size_t>(i)] = std::exp(-dx * dx * inv2h2);
    }
    for (int j = 0; j < g.ny; ++j) {
      const double dy = g.y0 + (j + 0.5) * g.resolution - p.pose.y;
      ky[static_cast<std::size_t>(j)] = p.weight * std::exp(-dy * dy * inv2h2);
    }
    for (int j = 0; j < g.ny; ++j) {
      double* row = g.mass.data() + static_cast<std::size_t>(j) * static_cast<std::size_t>(g.nx);
      const double wy = ky[static_cast<std::size_t>(j)];
      for (int i = 0; i < g.nx; ++i) {
        row[i] += wy * kx[static_cast<std::size_t>(i)];
      }
    }
  }
  double total = 0.0;
  for (double v : g.mass) {
    total += v;
  }
  for (double& v : g.mass) {
    v /= total;
  }
  return g;
}

/// -sum p log p over cells, 0 log 0 = 0.
inline double discrete_entropy(std::span<const double> mass) {
  double h = 0.0;
  for (double p : mass) {
    if (p > 0.0) {
      h -= p * std::log(p);
    }
  }
  return std::max(h, 0.0);
}

struct KdeEntropy {
  double entropy{0.0};
  double bandwidth{0.0};
};

inline KdeEntropy kde_spatial_entropy(const BeliefState& belief, const FilterConfig& cfg) {
  const KdeGrid g = kde_grid(belief.particles, cfg);
  return {discrete_entropy(g.mass), g.bandwidth};
}

inline double adaptive_lambda(double entropy, const FilterConfig& cfg) {
  return cfg.lambda_base * std::exp(-cfg.gamma * entropy);
}

// ---------------------------------------------------------------------------
// Reweighting and resampling

/// w' proportional to w exp(lambda s), normalized. Shifts by max s for stability.
inline void apply_likelihood(BeliefState& belief, std::span<const double> similarities, double lambda) {
  if (similarities.size() != belief.particles.size()) {
    throw ShapeError("apply_likelihood: one similarity per particle required");
  }
  const double smax = *std::max_element(similarities.begin(), similarities.end());
  for (std::size_t i = 0; i < similarities.size(); ++i) {
    belief.particles[i].weight *= std::exp(lambda * (similarities[i] - smax));
  }
  detail::normalize_weights(belief.particles);
}

/// Low-variance selection: offsets u + m/M against the cumulative weights.
inline std::vector<std::size_t> systematic_indices(std::span<const double> weights, std::size_t m, double u) {
  if (weights.empty() || m == 0) {
    throw ConfigError("systematic_indices: empty input");
  }
  std::vector<std::size_t> out;
  out.reserve(m);
  double cum = weights[0];
  std::size_t i = 0;
  for (std::size_t k = 0; k < m; ++k) {
    const double target = u + static_cast<double>(k) / static_cast<double>(m);
    while (target > cum && i + 1 < weights.size()) {
      cum += weights[++i];
    }
    out.push_back(i);
  }
  return out;
}

/// Systematic resampling; weights become uniform.
inline void resample(BeliefState& belief, const FilterConfig& cfg) {
  const std::size_t m = belief.particles.size();
  Rng rng(derive_seed(cfg.rng_seed, belief.step, detail::kStageResample));
  const double u = rng.uniform(0.0, 1.0 / static_cast<double>(m));
  std::vector<double> w(m);
  for (std::size_t i = 0; i < m; ++i) {
    w[i] = belief.particles[i].weight;
  }
  const auto idx = systematic_indices(w, m, u);
  std::vector<Particle> next;
  next.reserve(m);
  for (std::size_t i : idx) {
    next.push_back({belief.particles[i].pose, 1.0 / static_cast<double>(m)});
  }
  belief.particles = std::move(next);
}

/// Weighted mean position and circular-mean heading; a degenerate heading
/// distribution keeps the previous estimate's heading.
inline Pose estimate_pose(const BeliefState& belief) {
  Pose out;
  std::vector<double> th;
  std::vector<double> w;
  double total = 0.0;
  for (const auto& p : belief.particles) {
    total += p.weight;
  }
  for (const auto& p : belief.particles) {
    out.x += p.weight / total * p.pose.x;
    out.y += p.weight / total * p.pose.y;
    th.push_back(p.pose.theta);
    w.push_back(p.weight / total);
  }
  try {
    out.theta = weighted_circular_mean(th, w);
  } catch (const DomainError&) {
    out.theta = belief.last_estimate.theta;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Learned measurement model

struct ObservationConfig {
  SeasonId map_season{0};
  double patch_side{20.0};
  int patch_resolution{32};
  AggregationConfig aggregation;
};

/// Scores particle poses against a ground clip with the trained encoder and,
/// when present, the quality MLP (otherwise the latest frame alone is used).
class NeuralObservationModel {
 public:
  NeuralObservationModel(const WorldModel& world, const EncoderParams& encoder, const QualityMlpParams* mlp,
                         ObservationConfig cfg)
      : world_(&world), encoder_(&encoder), mlp_(mlp), cfg_(cfg) {}

  /// Pooled clip embedding, normalized. The quality MLP's aerial reference is
  /// rendered at `reference`; without an MLP or an on-map reference the latest
  /// frame is used alone.
  [[nodiscard]] AggregationResult embed_clip(const GroundClip& clip, const Pose& reference) const {
    std::vector<Embedding> frames;
    for (const auto& f : clip.frames) {
      frames.push_back(encode(*encoder_, f, Branch::ground));
    }
    AggregationResult r;
    if (mlp_ != nullptr && aerial_footprint_inside(*world_, reference, cfg_.patch_side)) {
      const Embedding a = encode(
          *encoder_, render_aerial_patch(*world_, reference, cfg_.map_season, cfg_.patch_side, cfg_.patch_resolution),
          Branch::aerial);
      r = aggregate_clip(frames, a, *mlp_, cfg_.aggregation);
    } else {
      r.weights.assign(frames.size(), 0.0);
      r.weights.back() = 1.0;
      r.e_agg = frames.back();
    }
    r.e_agg = l2_normalize(r.e_agg);
    return r;
  }

  /// Similarity score per pose; off-map poses get 0 and are counted.
  [[nodiscard]] std::vector<double> score(const Embedding& e, std::span<const Pose> poses,
                                          std::size_t* out_of_bounds = nullptr) const {
    std::vector<double> s(poses.size(), 0.0);
    std::vector<std::size_t> where;
    const nn::Mat emb = aerial_embeddings(poses, where, out_of_bounds);
    for (std::size_t k = 0; k < where.size(); ++k) {
      s[where[k]] = similarity(e, emb.col(static_cast<Eigen::Index>(k)));
    }
    return s;
  }

  [[nodiscard]] const ObservationConfig& config() const { return cfg_; }

 private:
  const WorldModel* world_;
  const EncoderParams* encoder_;
  const QualityMlpParams* mlp_;
  ObservationConfig cfg_;

  static double similarity(const Embedding& e, const Embedding& a) {
    return std::clamp(0.5 * (1.0 + e.dot(a)), 0.0, 1.0);
  }

  nn::Mat aerial_embeddings(std::span<const Pose> poses, std::vector<std::size_t>& where,
                            std::size_t* out_of_bounds) const {
    std::vector<ImagePatch> patches;
    for (std::size_t i = 0; i < poses.size(); ++i) {
      if (aerial_footprint_inside(*world_, poses[i], cfg_.patch_side)) {
        patches.push_back(
            render_aerial_patch(*world_, poses[i], cfg_.map_season, cfg_.patch_side, cfg_.patch_resolution));
        where.push_back(i);
      }
    }
    if (out_of_bounds != nullptr) {
      *out_of_bounds = poses.size() - where.size();
    }
    if (patches.empty()) {
      return {};
    }
    return encode_features_batch(*encoder_, frozen_features_batch(*encoder_, patches), Branch::aerial);
  }
};

struct StepDiagnostics {
  double entropy{0.0};
  double lambda{0.0};
  double ess{0.0};  // before any resampling
  bool resampled{false};
  std::size_t out_of_bounds{0};
  std::vector<double> frame_weights;
};

/// Entropy and temperature from the incoming belief, reweighting by the given
/// similarities, then resampling when ESS drops below the threshold.
inline StepDiagnostics update_with_similarities(BeliefState& belief, std::span<const double> similarities,
                                                const FilterConfig& cfg) {
  StepDiagnostics d;
  const KdeEntropy ke = kde_spatial_entropy(belief, cfg);
  d.entropy = ke.entropy;
  d.lambda = adaptive_lambda(ke.entropy, cfg);
  belief.last_entropy = d.entropy;
  belief.last_lambda = d.lambda;
  apply_likelihood(belief, similarities, d.lambda);
  d.ess = effective_sample_size(belief.particles);
  if (d.ess < cfg.ess_threshold_fraction * static_cast<double>(belief.particles.size())) {
    resample(belief, cfg);
    d.resampled = true;
  }
  return d;
}

inline StepDiagnostics measurement_update(BeliefState& belief, const GroundClip& clip,
                                          const NeuralObservationModel& model, const FilterConfig& cfg) {
  const AggregationResult agg = model.embed_clip(clip, estimate_pose(belief));
  std::vector<Pose> poses;
  poses.reserve(belief.particles.size());
  for (const auto& p : belief.particles) {
    poses.push_back(p.pose);
  }
  std::size_t oob = 0;
  const auto s = model.score(agg.e_agg, poses, &oob);
  StepDiagnostics d = update_with_similarities(belief, s, cfg);
  d.out_of_bounds = oob;
  d.frame_weights = agg.weights;
  return d;
}

struct Control {
  double delta_d{0.0};
  double delta_theta{0.0};
};

/// predict, optional measurement update, estimate.
inline std::pair<Pose, StepDiagnostics> step(BeliefState& belief, const Control& u, const GroundClip* clip,
                                             const NeuralObservationModel* model, const FilterConfig& cfg) {
  predict(belief, u.delta_d, u.delta_theta, cfg);
  StepDiagnostics d;
  if (clip != nullptr && model != nullptr) {
    d = measurement_update(belief, *clip, *model, cfg);
  } else {
    d.entropy = belief.last_entropy;
    d.lambda = belief.last_lambda;
    d.ess = effective_sample_size(belief.particles);
  }
  belief.last_estimate = estimate_pose(belief);
  return {belief.last_estimate, d};
}

// ---------------------------------------------------------------------------
// Simulated odometry and the localization loop

/// Per-run scale and heading-rate biases plus per-increment noise.
struct OdometryNoise {
  double scale_sigma{0.05};
  double heading_bias_per_m_sigma{0.003};  // rad per meter travelled
  double trans_per_m{0.02};
  double rot_per_m{0.002};
};

/// Odometry increments between consecutive trajectory poses.
inline std::vector<Control> simulate_odometry(const Trajectory& gt, const OdometryNoise& noise, std::uint64_t seed) {
  Rng rng(seed);
  const double scale = 1.0 + rng.normal(0.0, noise.scale_sigma);
  const double bias = rng.normal(0.0, noise.heading_bias_per_m_sigma);
  std::vector<Control> out;
  for (std::size_t i = 1; i < gt.size(); ++i) {
    const double d = distance(gt[i - 1].pose, gt[i].pose);
    const double dth = ang_diff(gt[i].pose.theta, gt[i - 1].pose.theta);
    out.push_back({scale * d + rng.normal(0.0, noise.trans_per_m * d),
                   dth + bias * d + rng.normal(0.0, noise.rot_per_m * d)});
  }
  return out;
}

struct LocalizationConfig {
  FilterConfig filter;
  OdometryNoise odometry;
  ObservationConfig observation;
  CameraConfig camera;
  SamplerConfig sampler;
  SeasonId ground_season{0};
  double ground_noise{0.02};
  double update_interval{1.0};  // seconds between measurement updates
  bool measurements{true};      // false: dead reckoning through the same filter
};

struct EstimateRow {
  double t{0.0};
  Pose pose;
  double entropy{0.0};
  double lambda{0.0};
  double ess{0.0};
};

struct LocalizationResult {
  std::vector<EstimateRow> rows;
  std::vector<StepDiagnostics> diagnostics;

  [[nodiscard]] Trajectory trajectory() const {
    Trajectory t;
    for (const auto& r : rows) {
      t.push_back({r.t, r.pose});
    }
    return t;
  }
};

/// Tracks `gt` from its first pose using simulated odometry at the trajectory
/// rate and measurement updates every `update_interval` seconds. The estimate
/// is recorded at the start and after every update instant.
inline LocalizationResult run_localization(const WorldModel& world, const Trajectory& gt,
                                           const NeuralObservationModel* model, const LocalizationConfig& cfg,
                                           std::uint64_t seed) {
  if (gt.size() < 2) {
    throw ConfigError("run_localization: trajectory needs at least two poses");
  }
  FilterConfig fcfg = cfg.filter;
  fcfg.rng_seed = derive_seed(seed, 0xF17u);
  validate(fcfg);
  const auto odo = simulate_odometry(gt, cfg.odometry, derive_seed(seed, 0x0D0u));
  BeliefState belief = init_particles(gt.front().pose, fcfg);
  LocalizationResult out;
  out.rows.push_back({gt.front().t, estimate_pose(belief), 0.0, belief.last_lambda,
                      effective_sample_size(belief.particles)});
  std::vector<double> times;
  times.reserve(gt.size());
  for (const auto& p : gt) {
    times.push_back(p.t);
  }
  double next_update = gt.front().t + cfg.update_interval;
  std::uint64_t updates = 0;
  for (std::size_t i = 1; i < gt.size(); ++i) {
    const bool update = gt[i].t >= next_update - 1e-9 || i + 1 == gt.size();
    if (!update) {
      predict(belief, odo[i - 1].delta_d, odo[i - 1].delta_theta, fcfg);
      continue;
    }
    next_update += cfg.update_interval;
    ++updates;
    std::optional<GroundClip> clip;
    if (cfg.measurements && model != nullptr) {
      const auto picked = select_clip_frames(std::span(gt.poses()).first(i + 1), std::span(times).first(i + 1),
                                             gt[i].t, cfg.sampler);
      std::vector<StampedPose> frame_poses;
      bool inside = true;
      for (std::size_t k : picked) {
        frame_poses.push_back(gt[k]);
        inside = inside && ground_footprint_inside(world, gt[k].pose, cfg.camera);
      }
      if (inside) {
        clip = render_ground_clip(world, frame_poses, cfg.ground_season, cfg.ground_noise,
                                  derive_seed(seed, updates, detail::kStageRender), cfg.camera);
      }
    }
    auto [est, diag] = step(belief, {odo[i - 1].delta_d, odo[i - 1].delta_theta}, clip ? &*clip : nullptr,
                            clip ? model : nullptr, fcfg);
    out.rows.push_back({gt[i].t, est, diag.entropy, diag.lambda, diag.ess});
    out.diagnostics.push_back(std::move(diag));
  }
  return out;
}

}  // namespace xvloc
