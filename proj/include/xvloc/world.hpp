#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "xvloc/core.hpp"

namespace xvloc {

/// Index of a capture epoch of the aerial map.
struct SeasonId {
  int tau{0};

  bool operator==(const SeasonId&) const = default;
};

/// Scalar image with intensities in [0,1], row-major, row 0 at the top.
struct ImagePatch {
  int rows{0};
  int cols{0};
  double meters_per_pixel{1.0};
  std::vector<double> pixels;

  ImagePatch() = default;
  ImagePatch(int r, int c, double mpp, double fill = 0.0)
      : rows(r), cols(c), meters_per_pixel(mpp), pixels(static_cast<std::size_t>(r) * c, fill) {
    if (r < 4 || c < 4) {
      throw ShapeError("ImagePatch: rows and cols must be >= 4");
    }
  }

  [[nodiscard]] double& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * cols + c]; }
  [[nodiscard]] double at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * cols + c]; }
  [[nodiscard]] std::size_t size() const { return pixels.size(); }

  bool operator==(const ImagePatch&) const = default;
};

/// Short ground-view video clip with index-aligned frame poses.
struct GroundClip {
  std::vector<ImagePatch> frames;
  std::vector<StampedPose> frame_poses;
};

struct AugmentationParams {
  double brightness_scale{1.0};
  double contrast_scale{1.0};
  double crop_fraction{1.0};
  std::array<double, 2> crop_offset{0.0, 0.0};  // (row, col) in pixels

  bool operator==(const AugmentationParams&) const = default;
};

/// Knobs for the synthetic world. Everything derives from `seed`.
struct WorldConfig {
  std::uint64_t seed{7};
  double extent{600.0};
  int num_seasons{4};
  double raster_resolution{0.5};
  // Band-limited structure noise: wavelengths (m) and relative amplitudes.
  std::vector<double> structure_wavelengths{40.0, 16.0, 7.0};
  std::vector<double> structure_amplitudes{0.45, 0.35, 0.25};
  int trail_count{14};
  double trail_width{1.5};
  double trail_level{0.95};
  // Seasonal appearance: additive noise in a finer band, then a tone curve.
  double season_noise_sigma{0.04};
  double season_noise_wavelength{3.0};
  double season_log_gamma_range{2.2};  // log tone gamma spans [-r, r] across seasons
};

/// Ground camera stand-in: a forward trapezoid footprint resampled to rows x cols.
struct CameraConfig {
  int rows{32};
  int cols{32};
  double near{1.0};
  double depth{20.0};
  double half_fov{deg2rad(30.0)};
};

namespace detail {

inline double hash_unit(std::uint64_t seed, std::int64_t i, std::int64_t j) {
  std::uint64_t h = derive_seed(seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j));
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);  // [0,1)
}

inline double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

/// Lattice value noise in [-1,1] with quintic interpolation.
inline double value_noise(std::uint64_t seed, double x, double y, double wavelength) {
  const double gx = x / wavelength;
  const double gy = y / wavelength;
  const auto i = static_cast<std::int64_t>(std::floor(gx));
  const auto j = static_cast<std::int64_t>(std::floor(gy));
  const double fx = fade(gx - static_cast<double>(i));
  const double fy = fade(gy - static_cast<double>(j));
  const double v00 = hash_unit(seed, i, j);
  const double v10 = hash_unit(seed, i + 1, j);
  const double v01 = hash_unit(seed, i, j + 1);
  const double v11 = hash_unit(seed, i + 1, j + 1);
  const double a = v00 + (v10 - v00) * fx;
  const double b = v01 + (v11 - v01) * fx;
  return 2.0 * (a + (b - a) * fy) - 1.0;
}

/// Square raster of node values; node (i, j) sits at (i*res, j*res).
struct Raster {
  int n{0};
  double res{1.0};
  std::vector<float> values;

  [[nodiscard]] float& node(int i, int j) { return values[static_cast<std::size_t>(j) * n + i]; }
  [[nodiscard]] float node(int i, int j) const { return values[static_cast<std::size_t>(j) * n + i]; }

  /// Bilinear sample; the caller guarantees (x, y) lies inside the extent.
  [[nodiscard]] double sample(double x, double y) const {
    const double gx = std::clamp(x / res, 0.0, static_cast<double>(n - 1));
    const double gy = std::clamp(y / res, 0.0, static_cast<double>(n - 1));
    int i = std::min(static_cast<int>(gx), n - 2);
    int j = std::min(static_cast<int>(gy), n - 2);
    const double fx = gx - i;
    const double fy = gy - j;
    const double a = node(i, j) + (node(i + 1, j) - node(i, j)) * fx;
    const double b = node(i, j + 1) + (node(i + 1, j + 1) - node(i, j + 1)) * fx;
    return a + (b - a) * fy;
  }
};

}  // namespace detail

/// Monotone per-season tone curve: lo + (hi - lo) * v^gamma.
struct ToneCurve {
  double gamma{1.0};
  double lo{0.0};
  double hi{1.0};

  [[nodiscard]] double apply(double v) const { return lo + (hi - lo) * std::pow(std::clamp(v, 0.0, 1.0), gamma); }
  [[nodiscard]] double invert(double y) const {
    return std::pow(std::clamp((y - lo) / (hi - lo), 0.0, 1.0), 1.0 / gamma);
  }
};

struct SeasonTransform {
  ToneCurve tone;
  std::uint64_t noise_seed{0};
};

/// Immutable seeded world. Copies share the underlying rasters.
class WorldModel {
 public:
  WorldModel(WorldConfig cfg, std::shared_ptr<const detail::Raster> structure,
             std::vector<std::shared_ptr<const detail::Raster>> appearance, std::vector<SeasonTransform> seasons)
      : cfg_(std::move(cfg)),
        structure_(std::move(structure)),
        appearance_(std::move(appearance)),
        seasons_(std::move(seasons)) {}

  [[nodiscard]] const WorldConfig& config() const { return cfg_; }
  [[nodiscard]] double extent() const { return cfg_.extent; }
  [[nodiscard]] int num_seasons() const { return static_cast<int>(seasons_.size()); }
  [[nodiscard]] const std::vector<SeasonTransform>& season_transforms() const { return seasons_; }

  [[nodiscard]] bool contains(double x, double y) const { return x >= 0.0 && y >= 0.0 && x <= extent() && y <= extent(); }

  /// Season-invariant structure S(x, y) in [0,1].
  [[nodiscard]] double structure(double x, double y) const {
    check_inside(x, y);
    return structure_->sample(x, y);
  }

  /// Seasonal appearance A_tau(S)(x, y) in [0,1].
  [[nodiscard]] double appearance(SeasonId season, double x, double y) const {
    check_inside(x, y);
    return appearance_.at(checked_season(season))->sample(x, y);
  }

  [[nodiscard]] std::size_t checked_season(SeasonId season) const {
    if (season.tau < 0 || season.tau >= num_seasons()) {
      throw ConfigError("season index " + std::to_string(season.tau) + " out of range");
    }
    return static_cast<std::size_t>(season.tau);
  }

 private:
  void check_inside(double x, double y) const {
    if (!contains(x, y)) {
      throw OutOfBoundsError("world sample outside extent");
    }
  }

  WorldConfig cfg_;
  std::shared_ptr<const detail::Raster> structure_;
  std::vector<std::shared_ptr<const detail::Raster>> appearance_;
  std::vector<SeasonTransform> seasons_;
};

namespace detail {

inline void stamp_trail_segment(Raster& mask, double x0, double y0, double x1, double y1, double width) {
  const double reach = 3.0 * width;
  const int i_lo = std::max(0, static_cast<int>(std::floor((std::min(x0, x1) - reach) / mask.res)));
  const int i_hi = std::min(mask.n - 1, static_cast<int>(std::ceil((std::max(x0, x1) + reach) / mask.res)));
  const int j_lo = std::max(0, static_cast<int>(std::floor((std::min(y0, y1) - reach) / mask.res)));
  const int j_hi = std::min(mask.n - 1, static_cast<int>(std::ceil((std::max(y0, y1) + reach) / mask.res)));
  const double dx = x1 - x0;
  const double dy = y1 - y0;
  const double len2 = std::max(dx * dx + dy * dy, 1e-12);
  for (int j = j_lo; j <= j_hi; ++j) {
    for (int i = i_lo; i <= i_hi; ++i) {
      const double px = i * mask.res;
      const double py = j * mask.res;
      const double t = std::clamp(((px - x0) * dx + (py - y0) * dy) / len2, 0.0, 1.0);
      const double ex = px - (x0 + t * dx);
      const double ey = py - (y0 + t * dy);
      const double m = std::exp(-(ex * ex + ey * ey) / (2.0 * width * width));
      float& cell = mask.node(i, j);
      cell = std::max(cell, static_cast<float>(m));
    }
  }
}

/// Connected trail network: each trail after the first branches off a point of
/// an earlier trail and meanders as a curvature-limited random walk.
inline Raster trail_mask(const WorldConfig& cfg, int n) {
  Raster mask{n, cfg.raster_resolution, std::vector<float>(static_cast<std::size_t>(n) * n, 0.0f)};
  Rng rng(derive_seed(cfg.seed, 0x7472u));
  std::vector<std::array<double, 2>> visited;
  const double step = 2.0;
  const int steps = static_cast<int>(0.8 * cfg.extent / step);
  for (int k = 0; k < cfg.trail_count; ++k) {
    double x;
    double y;
    if (visited.empty()) {
      x = rng.uniform(0.3, 0.7) * cfg.extent;
      y = rng.uniform(0.3, 0.7) * cfg.extent;
    } else {
      const auto& p = visited[rng.index(visited.size())];
      x = p[0];
      y = p[1];
    }
    double heading = rng.uniform(-kPi, kPi);
    double turn = 0.0;
    for (int s = 0; s < steps; ++s) {
      turn = 0.9 * turn + rng.normal(0.0, 0.04);
      heading += turn;
      const double nx = x + step * std::cos(heading);
      const double ny = y + step * std::sin(heading);
      if (nx < 0.0 || ny < 0.0 || nx > cfg.extent || ny > cfg.extent) {
        break;
      }
      stamp_trail_segment(mask, x, y, nx, ny, cfg.trail_width);
      x = nx;
      y = ny;
      visited.push_back({x, y});
    }
  }
  return mask;
}

}  // namespace detail

/// Builds the seeded world. Same config, bit-identical rasters.
inline WorldModel build_world(const WorldConfig& cfg) {
  if (cfg.num_seasons < 1) {
    throw ConfigError("build_world: num_seasons must be >= 1");
  }
  if (!(cfg.extent >= 100.0)) {
    throw ConfigError("build_world: extent must be >= 100 m");
  }
  if (!(cfg.raster_resolution > 0.0) || cfg.structure_wavelengths.size() != cfg.structure_amplitudes.size() ||
      cfg.structure_wavelengths.empty()) {
    throw ConfigError("build_world: invalid structure noise configuration");
  }
  const int n = static_cast<int>(std::ceil(cfg.extent / cfg.raster_resolution)) + 1;
  auto structure = std::make_shared<detail::Raster>();
  structure->n = n;
  structure->res = cfg.raster_resolution;
  structure->values.resize(static_cast<std::size_t>(n) * n);

  const detail::Raster trails = detail::trail_mask(cfg, n);
  double amp_total = 0.0;
  for (double a : cfg.structure_amplitudes) {
    amp_total += a;
  }
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const double x = i * cfg.raster_resolution;
      const double y = j * cfg.raster_resolution;
      double v = 0.0;
      for (std::size_t o = 0; o < cfg.structure_wavelengths.size(); ++o) {
        v += cfg.structure_amplitudes[o] *
             detail::value_noise(derive_seed(cfg.seed, 0x5354u, o), x, y, cfg.structure_wavelengths[o]);
      }
      // Map roughly [-amp_total, amp_total] into [0.05, 0.8]; trails are brighter.
      double base = std::clamp(0.425 + 0.6 * v / amp_total, 0.0, 1.0);
      const double m = trails.node(i, j);
      structure->node(i, j) = static_cast<float>(base * (1.0 - m) + cfg.trail_level * m);
    }
  }

  std::vector<SeasonTransform> seasons;
  std::vector<std::shared_ptr<const detail::Raster>> appearance;
  for (int tau = 0; tau < cfg.num_seasons; ++tau) {
    Rng rng(derive_seed(cfg.seed, 0x5345u, static_cast<std::uint64_t>(tau)));
    SeasonTransform st;
    // Log-gamma drifts with the season index, jittered within its stratum.
    const double u = (tau + rng.uniform(0.0, 1.0)) / cfg.num_seasons;
    st.tone.gamma = std::exp(cfg.season_log_gamma_range * (2.0 * u - 1.0));
    st.tone.lo = rng.uniform(0.0, 0.15);
    st.tone.hi = rng.uniform(0.8, 1.0);
    st.noise_seed = rng.next();
    auto layer = std::make_shared<detail::Raster>();
    layer->n = n;
    layer->res = cfg.raster_resolution;
    layer->values.resize(structure->values.size());
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        const double x = i * cfg.raster_resolution;
        const double y = j * cfg.raster_resolution;
        const double noise = detail::value_noise(st.noise_seed, x, y, cfg.season_noise_wavelength);
        const double s = std::clamp(structure->node(i, j) + cfg.season_noise_sigma * noise, 0.0, 1.0);
        layer->node(i, j) = static_cast<float>(st.tone.apply(s));
      }
    }
    seasons.push_back(st);
    appearance.push_back(std::move(layer));
  }
  return WorldModel(cfg, std::move(structure), std::move(appearance), std::move(seasons));
}

inline WorldModel build_world(std::uint64_t seed, double extent, int num_seasons) {
  WorldConfig cfg;
  cfg.seed = seed;
  cfg.extent = extent;
  cfg.num_seasons = num_seasons;
  return build_world(cfg);
}

namespace detail {

/// World point for an image-plane offset: `forward` along the heading,
/// `right` perpendicular (clockwise) to it.
inline std::array<double, 2> body_to_world(const Pose& pose, double forward, double right) {
  const double c = std::cos(pose.theta);
  const double s = std::sin(pose.theta);
  return {pose.x + forward * c + right * s, pose.y + forward * s - right * c};
}

/// Aerial footprint: heading points up (row 0), right of heading is +col.
template <typename Fn>
void for_each_aerial_pixel(const Pose& pose, double side, int resolution, Fn&& fn) {
  const double mpp = side / resolution;
  for (int r = 0; r < resolution; ++r) {
    const double forward = (resolution / 2.0 - (r + 0.5)) * mpp;
    for (int c = 0; c < resolution; ++c) {
      const double right = (c + 0.5 - resolution / 2.0) * mpp;
      fn(r, c, body_to_world(pose, forward, right));
    }
  }
}

}  // namespace detail

/// True when every corner of the heading-aligned square footprint is inside.
inline bool aerial_footprint_inside(const WorldModel& world, const Pose& pose, double side) {
  const double h = side / 2.0;
  for (double f : {-h, h}) {
    for (double r : {-h, h}) {
      const auto p = detail::body_to_world(pose, f, r);
      if (!world.contains(p[0], p[1])) {
        return false;
      }
    }
  }
  return true;
}

/// Renders a heading-up aerial patch of `side` meters centered at `pose`.
inline ImagePatch render_aerial_patch(const WorldModel& world, const Pose& pose, SeasonId season, double side,
                                      int resolution) {
  if (!(side > 0.0)) {
    throw ConfigError("render_aerial_patch: side must be positive");
  }
  if (!aerial_footprint_inside(world, pose, side)) {
    throw OutOfBoundsError("render_aerial_patch: footprint outside world extent");
  }
  ImagePatch patch(resolution, resolution, side / resolution);
  const std::size_t tau = world.checked_season(season);
  (void)tau;
  detail::for_each_aerial_pixel(pose, side, resolution, [&](int r, int c, const std::array<double, 2>& p) {
    patch.at(r, c) = std::clamp(world.appearance(season, p[0], p[1]), 0.0, 1.0);
  });
  return patch;
}

/// Same footprint as render_aerial_patch, sampling the season-invariant structure.
inline ImagePatch render_structure_patch(const WorldModel& world, const Pose& pose, double side, int resolution) {
  if (!aerial_footprint_inside(world, pose, side)) {
    throw OutOfBoundsError("render_structure_patch: footprint outside world extent");
  }
  ImagePatch patch(resolution, resolution, side / resolution);
  detail::for_each_aerial_pixel(pose, side, resolution, [&](int r, int c, const std::array<double, 2>& p) {
    patch.at(r, c) = world.structure(p[0], p[1]);
  });
  return patch;
}

namespace detail {

template <typename Fn>
void for_each_ground_pixel(const Pose& pose, const CameraConfig& cam, Fn&& fn) {
  const double far = cam.near + cam.depth;
  const double spread = std::tan(cam.half_fov);
  for (int r = 0; r < cam.rows; ++r) {
    const double v = (cam.rows - r - 0.5) / cam.rows;  // 0 at the bottom (near), 1 at the top (far)
    const double d = cam.near + v * (far - cam.near);
    for (int c = 0; c < cam.cols; ++c) {
      const double u = 2.0 * (c + 0.5) / cam.cols - 1.0;
      fn(r, c, body_to_world(pose, d, u * d * spread));
    }
  }
}

}  // namespace detail

inline bool ground_footprint_inside(const WorldModel& world, const Pose& pose, const CameraConfig& cam) {
  const double far = cam.near + cam.depth;
  const double spread = std::tan(cam.half_fov);
  for (double d : {cam.near, far}) {
    for (double u : {-1.0, 1.0}) {
      const auto p = detail::body_to_world(pose, d, u * d * spread);
      if (!world.contains(p[0], p[1])) {
        return false;
      }
    }
  }
  return true;
}

/// Renders a single noise-free ground frame.
inline ImagePatch render_ground_frame(const WorldModel& world, const Pose& pose, SeasonId season,
                                      const CameraConfig& cam) {
  if (!ground_footprint_inside(world, pose, cam)) {
    throw OutOfBoundsError("render_ground_frame: footprint outside world extent");
  }
  ImagePatch frame(cam.rows, cam.cols, cam.depth / cam.rows);
  detail::for_each_ground_pixel(pose, cam, [&](int r, int c, const std::array<double, 2>& p) {
    frame.at(r, c) = world.appearance(season, p[0], p[1]);
  });
  return frame;
}

/// Renders one frame per pose plus i.i.d. Gaussian pixel noise, clamped to [0,1].
inline GroundClip render_ground_clip(const WorldModel& world, const std::vector<StampedPose>& true_poses,
                                     SeasonId season, double noise_sigma, std::uint64_t rng_seed,
                                     const CameraConfig& cam = {}) {
  if (true_poses.empty()) {
    throw ConfigError("render_ground_clip: empty pose list");
  }
  GroundClip clip;
  clip.frame_poses = true_poses;
  clip.frames.reserve(true_poses.size());
  for (std::size_t k = 0; k < true_poses.size(); ++k) {
    ImagePatch frame = render_ground_frame(world, true_poses[k].pose, season, cam);
    if (noise_sigma > 0.0) {
      Rng rng(derive_seed(rng_seed, k));
      for (double& px : frame.pixels) {
        px = std::clamp(px + rng.normal(0.0, noise_sigma), 0.0, 1.0);
      }
    }
    clip.frames.push_back(std::move(frame));
  }
  return clip;
}

struct TrajectoryConfig {
  double length{500.0};
  double speed_min{1.0};
  double speed_max{2.0};
  double dt{0.1};
  double margin{100.0};        // keep-out band along the world border
  double max_curvature{0.04};  // 1/m
};

/// Smooth, curvature-limited random drive inside the world's keep-in box.
inline Trajectory generate_trajectory(const WorldModel& world, const TrajectoryConfig& cfg, std::uint64_t rng_seed) {
  if (!(cfg.length > 0.0) || !(cfg.dt > 0.0) || !(cfg.speed_min > 0.0) || cfg.speed_max < cfg.speed_min ||
      !(cfg.max_curvature > 0.0)) {
    throw ConfigError("generate_trajectory: invalid length, dt, speed range, or curvature");
  }
  const double lo = cfg.margin;
  const double hi = world.extent() - cfg.margin;
  if (hi - lo < 4.0 / cfg.max_curvature) {
    throw ConfigError("generate_trajectory: keep-in box too small for the curvature limit");
  }
  const double center = world.extent() / 2.0;
  constexpr int kAttempts = 64;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    Rng rng(derive_seed(rng_seed, static_cast<std::uint64_t>(attempt)));
    double x = rng.uniform(lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo));
    double y = rng.uniform(lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo));
    double theta = rng.uniform(-kPi, kPi);
    double kappa = 0.0;
    double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    double travelled = 0.0;
    double t = 0.0;
    bool ok = true;
    std::vector<StampedPose> poses{{0.0, Pose{x, y, wrap_angle(theta)}}};
    const double look = 3.0 / cfg.max_curvature;
    // The tolerance absorbs summation drift so no sliver step is appended.
    while (travelled < cfg.length - 1e-6) {
      // Curvature: mean-reverting noise, steered home when the look-ahead leaves the box.
      const double ax = x + look * std::cos(theta);
      const double ay = y + look * std::sin(theta);
      double target = 0.0;
      if (ax < lo || ax > hi || ay < lo || ay > hi) {
        const double bearing = std::atan2(center - y, center - x);
        target = ang_diff(bearing, theta) > 0.0 ? cfg.max_curvature : -cfg.max_curvature;
      }
      kappa += 0.1 * (target - kappa) + rng.normal(0.0, 0.1 * cfg.max_curvature);
      kappa = std::clamp(kappa, -cfg.max_curvature, cfg.max_curvature);
      speed += 0.05 * ((cfg.speed_min + cfg.speed_max) / 2.0 - speed) + rng.normal(0.0, 0.05 * (cfg.speed_max - cfg.speed_min));
      speed = std::clamp(speed, cfg.speed_min, cfg.speed_max);

      double step = speed * cfg.dt;
      double step_dt = cfg.dt;
      if (travelled + step > cfg.length) {
        step_dt *= (cfg.length - travelled) / step;
        step = cfg.length - travelled;
      }
      const double dtheta = kappa * step;
      x += step * std::cos(theta + dtheta / 2.0);
      y += step * std::sin(theta + dtheta / 2.0);
      theta = wrap_angle(theta + dtheta);
      travelled += step;
      t += step_dt;
      if (x < lo / 2.0 || y < lo / 2.0 || x > world.extent() - lo / 2.0 || y > world.extent() - lo / 2.0) {
        ok = false;
        break;
      }
      if (step_dt <= 0.0) {
        break;
      }
      poses.push_back({t, Pose{x, y, theta}});
    }
    if (ok) {
      return Trajectory(std::move(poses));
    }
  }
  throw ConfigError("generate_trajectory: could not keep the path inside the world");
}

namespace detail {

inline double sample_bilinear(const ImagePatch& img, double r, double c) {
  r = std::clamp(r, 0.0, static_cast<double>(img.rows - 1));
  c = std::clamp(c, 0.0, static_cast<double>(img.cols - 1));
  const int r0 = std::min(static_cast<int>(r), img.rows - 2);
  const int c0 = std::min(static_cast<int>(c), img.cols - 2);
  const double fr = r - r0;
  const double fc = c - c0;
  const double a = img.at(r0, c0) + (img.at(r0, c0 + 1) - img.at(r0, c0)) * fc;
  const double b = img.at(r0 + 1, c0) + (img.at(r0 + 1, c0 + 1) - img.at(r0 + 1, c0)) * fc;
  return a + (b - a) * fr;
}

}  // namespace detail

inline void validate(const AugmentationParams& p) {
  if (!(p.brightness_scale > 0.0) || !(p.contrast_scale > 0.0) || !(p.crop_fraction > 0.8) ||
      !(p.crop_fraction <= 1.0) || !std::isfinite(p.crop_offset[0]) || !std::isfinite(p.crop_offset[1])) {
    throw ConfigError("AugmentationParams out of range");
  }
}

/// Crop-and-resize, then brightness and contrast about the mean, clamped to [0,1].
inline ImagePatch apply_augmentation(const ImagePatch& in, const AugmentationParams& p) {
  validate(p);
  ImagePatch out = in;
  const double fr = p.crop_fraction;
  const bool crops = fr != 1.0 || p.crop_offset[0] != 0.0 || p.crop_offset[1] != 0.0;
  if (crops) {
    // Crop window origin: centered, shifted by the offset, kept inside the image.
    const double win_r = fr * in.rows;
    const double win_c = fr * in.cols;
    const double r0 = std::clamp((in.rows - win_r) / 2.0 + p.crop_offset[0], 0.0, in.rows - win_r);
    const double c0 = std::clamp((in.cols - win_c) / 2.0 + p.crop_offset[1], 0.0, in.cols - win_c);
    for (int r = 0; r < in.rows; ++r) {
      for (int c = 0; c < in.cols; ++c) {
        out.at(r, c) = detail::sample_bilinear(in, r0 + (r + 0.5) * fr - 0.5, c0 + (c + 0.5) * fr - 0.5);
      }
    }
  }
  if (p.contrast_scale != 1.0 || p.brightness_scale != 1.0) {
    double mean = 0.0;
    for (double v : out.pixels) {
      mean += v;
    }
    mean /= static_cast<double>(out.size());
    for (double& v : out.pixels) {
      v = std::clamp(((v - mean) * p.contrast_scale + mean) * p.brightness_scale, 0.0, 1.0);
    }
  }
  return out;
}

/// Every frame of the clip receives the identical parameters.
inline GroundClip apply_augmentation(const GroundClip& clip, const AugmentationParams& p) {
  GroundClip out;
  out.frame_poses = clip.frame_poses;
  out.frames.reserve(clip.frames.size());
  for (const auto& f : clip.frames) {
    out.frames.push_back(apply_augmentation(f, p));
  }
  return out;
}

struct AugmentationRanges {
  double brightness{0.15};    // scale drawn from [1 - b, 1 + b]
  double contrast{0.15};
  double min_crop{0.85};
  double max_offset{1.5};     // pixels
};

inline AugmentationParams sample_augmentation(Rng& rng, const AugmentationRanges& ranges) {
  AugmentationParams p;
  p.brightness_scale = rng.uniform(1.0 - ranges.brightness, 1.0 + ranges.brightness);
  p.contrast_scale = rng.uniform(1.0 - ranges.contrast, 1.0 + ranges.contrast);
  p.crop_fraction = rng.uniform(std::max(ranges.min_crop, 0.8 + 1e-9), 1.0);
  p.crop_offset = {rng.uniform(-ranges.max_offset, ranges.max_offset), rng.uniform(-ranges.max_offset, ranges.max_offset)};
  return p;
}

/// Binary 8-bit PGM (P5).
inline void write_pgm(const std::string& path, const ImagePatch& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot open " + path + " for writing");
  }
  os << "P5\n" << img.cols << ' ' << img.rows << "\n255\n";
  for (double v : img.pixels) {
    const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    os.put(static_cast<char>(byte));
  }
}

}  // namespace xvloc
