#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace xvloc {

/// Non-finite or otherwise mathematically invalid input.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Invalid configuration value or combination of values.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Dimension or resolution mismatch between operands.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A sampling footprint left the world extent.
struct OutOfBoundsError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

inline constexpr double kPi = std::numbers::pi;

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Maps an angle to its representative in (-pi, pi].
inline double wrap_angle(double a) {
  if (!std::isfinite(a)) {
    throw DomainError("wrap_angle: non-finite angle");
  }
  double r = std::remainder(a, 2.0 * kPi);  // in [-pi, pi]
  if (r <= -kPi) {
    r += 2.0 * kPi;
  }
  return r;
}

/// Signed minimal difference a - b, in (-pi, pi].
inline double ang_diff(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b)) {
    throw DomainError("ang_diff: non-finite angle");
  }
  return wrap_angle(a - b);
}

/// Weighted circular mean; throws DomainError when the resultant vector vanishes
/// (the heading is undefined, e.g. antipodal mass).
inline double weighted_circular_mean(std::span<const double> angles, std::span<const double> weights) {
  if (angles.size() != weights.size() || angles.empty()) {
    throw ShapeError("weighted_circular_mean: angles and weights must be nonempty and equal length");
  }
  double total = 0.0;
  double sx = 0.0;
  double sy = 0.0;
  for (std::size_t i = 0; i < angles.size(); ++i) {
    if (weights[i] < 0.0 || !std::isfinite(weights[i]) || !std::isfinite(angles[i])) {
      throw DomainError("weighted_circular_mean: invalid angle or weight");
    }
    total += weights[i];
    sx += weights[i] * std::cos(angles[i]);
    sy += weights[i] * std::sin(angles[i]);
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw DomainError("weighted_circular_mean: weights must sum to 1");
  }
  if (std::hypot(sx, sy) <= 1e-12) {
    throw DomainError("weighted_circular_mean: undefined heading (degenerate resultant)");
  }
  return wrap_angle(std::atan2(sy, sx));
}

/// Planar 3-DoF pose. x east, y north (meters); theta counterclockwise from east.
struct Pose {
  double x{0.0};
  double y{0.0};
  double theta{0.0};

  bool operator==(const Pose&) const = default;
};

inline Pose make_pose(double x, double y, double theta) {
  if (!std::isfinite(x) || !std::isfinite(y)) {
    throw DomainError("make_pose: non-finite position");
  }
  return Pose{x, y, wrap_angle(theta)};
}

inline double distance(const Pose& a, const Pose& b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct StampedPose {
  double t{0.0};
  Pose pose;

  bool operator==(const StampedPose&) const = default;
};

/// Ordered sequence of stamped poses with strictly increasing timestamps.
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(std::vector<StampedPose> poses) : poses_(std::move(poses)) { validate(); }

  void push_back(const StampedPose& p) {
    if (!poses_.empty() && !(p.t > poses_.back().t)) {
      throw DomainError("Trajectory: timestamps must be strictly increasing");
    }
    poses_.push_back(p);
  }

  [[nodiscard]] std::size_t size() const { return poses_.size(); }
  [[nodiscard]] bool empty() const { return poses_.empty(); }
  [[nodiscard]] const StampedPose& operator[](std::size_t i) const { return poses_[i]; }
  [[nodiscard]] const StampedPose& front() const { return poses_.front(); }
  [[nodiscard]] const StampedPose& back() const { return poses_.back(); }
  [[nodiscard]] const std::vector<StampedPose>& poses() const { return poses_; }
  [[nodiscard]] auto begin() const { return poses_.begin(); }
  [[nodiscard]] auto end() const { return poses_.end(); }

  /// Total planar path length.
  [[nodiscard]] double arc_length() const {
    double total = 0.0;
    for (std::size_t i = 1; i < poses_.size(); ++i) {
      total += distance(poses_[i - 1].pose, poses_[i].pose);
    }
    return total;
  }

  bool operator==(const Trajectory&) const = default;

 private:
  void validate() const {
    for (std::size_t i = 0; i < poses_.size(); ++i) {
      const auto& p = poses_[i];
      if (!std::isfinite(p.t) || !std::isfinite(p.pose.x) || !std::isfinite(p.pose.y) ||
          !std::isfinite(p.pose.theta)) {
        throw DomainError("Trajectory: non-finite value at row " + std::to_string(i));
      }
      if (i > 0 && !(p.t > poses_[i - 1].t)) {
        throw DomainError("Trajectory: timestamps must be strictly increasing (row " + std::to_string(i) + ")");
      }
    }
  }

  std::vector<StampedPose> poses_;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Trajectory CSV: header `t,x,y,theta`, theta in radians.

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "t,x,y,theta\n";
  for (const auto& p : traj) {
    os << detail::format_double(p.t) << ',' << detail::format_double(p.pose.x) << ','
       << detail::format_double(p.pose.y) << ',' << detail::format_double(p.pose.theta) << '\n';
  }
}

inline void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
  std::ofstream os(path);
  if (!os) {
    throw std::runtime_error("cannot open " + path + " for writing");
  }
  write_trajectory_csv(os, traj);
}

/// Reads a trajectory CSV. Extra trailing columns are ignored so estimate
/// files (`t,x,y,theta,H_t,...`) load as trajectories too.
inline Trajectory read_trajectory_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) {
    throw std::runtime_error("trajectory csv: empty input");
  }
  if (line.rfind("t,x,y,theta", 0) != 0) {
    throw std::runtime_error("trajectory csv: expected header 't,x,y,theta'");
  }
  std::vector<StampedPose> poses;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) {
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    double v[4];
    for (double& value : v) {
      if (!std::getline(ss, cell, ',')) {
        throw std::runtime_error("trajectory csv: too few columns at line " + std::to_string(row));
      }
      try {
        value = std::stod(cell);
      } catch (const std::exception&) {
        throw std::runtime_error("trajectory csv: bad number at line " + std::to_string(row));
      }
    }
    poses.push_back({v[0], Pose{v[1], v[2], v[3]}});
  }
  Trajectory traj(std::move(poses));
  if (traj.empty()) {
    throw std::runtime_error("trajectory csv: no rows");
  }
  return traj;
}

inline Trajectory read_trajectory_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("cannot open " + path);
  }
  return read_trajectory_csv(is);
}

// Seed plumbing: every random stream is derived from a top-level seed and a
// small tuple of stream keys.

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) { return splitmix64(seed ^ splitmix64(key)); }

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2) {
  return derive_seed(derive_seed(seed, k1), k2);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2, std::uint64_t k3) {
  return derive_seed(derive_seed(seed, k1, k2), k3);
}

/// Seeded random stream. Thin wrapper so call sites read as intent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double sigma = 1.0) {
    if (sigma == 0.0) {
      return mean;
    }
    return std::normal_distribution<double>(mean, sigma)(engine_);
  }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace xvloc
