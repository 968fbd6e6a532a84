#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "xvloc/core.hpp"

namespace xvloc {

struct SamplerConfig {
  int num_frames{4};       // N
  double t_max{2.0};       // seconds of lookback
  double l_min{1.5};       // meters; shorter windows extend the lookback
  double max_spacing{5.0}; // meters between selected frames
  double fps{10.0};
};

inline void validate(const SamplerConfig& cfg) {
  if (cfg.num_frames < 1 || !(cfg.t_max > 0.0) || !(cfg.max_spacing > 0.0) || cfg.l_min < 0.0 || !(cfg.fps > 0.0)) {
    throw ConfigError("SamplerConfig: need N >= 1, T_max > 0, max_spacing > 0, L_min >= 0, fps > 0");
  }
}

/// Cumulative path length of `poses` evaluated at time t (linear in time
/// between pose stamps, clamped at the ends).
class ArcLengthClock {
 public:
  explicit ArcLengthClock(std::span<const StampedPose> poses) : poses_(poses.begin(), poses.end()) {
    if (poses_.empty()) {
      throw ConfigError("select_clip_frames: empty pose list");
    }
    cum_.resize(poses_.size(), 0.0);
    for (std::size_t i = 1; i < poses_.size(); ++i) {
      if (!(poses_[i].t > poses_[i - 1].t)) {
        throw DomainError("select_clip_frames: poses must be strictly time-sorted");
      }
      cum_[i] = cum_[i - 1] + distance(poses_[i - 1].pose, poses_[i].pose);
    }
  }

  [[nodiscard]] double at(double t) const {
    if (t <= poses_.front().t) {
      return 0.0;
    }
    if (t >= poses_.back().t) {
      return cum_.back();
    }
    const auto it = std::upper_bound(poses_.begin(), poses_.end(), t,
                                     [](double v, const StampedPose& p) { return v < p.t; });
    const auto k = static_cast<std::size_t>(it - poses_.begin());
    const double f = (t - poses_[k - 1].t) / (poses_[k].t - poses_[k - 1].t);
    return cum_[k - 1] + f * (cum_[k] - cum_[k - 1]);
  }

 private:
  std::vector<StampedPose> poses_;
  std::vector<double> cum_;
};

namespace detail {

inline constexpr double kStationaryArc = 1e-6;
inline constexpr double kTimeEps = 1e-9;

/// First index in [first, last] of the window whose frame starts the clip,
/// applying the T_max / L_min / max_spacing rules.
inline std::size_t clip_window_start(std::span<const double> frame_times, std::span<const double> cum,
                                     std::size_t last, double now, const SamplerConfig& cfg) {
  auto earliest_after = [&](double t0) {
    std::size_t j = last;
    while (j > 0 && frame_times[j - 1] >= t0 - kTimeEps) {
      --j;
    }
    return j;
  };
  std::size_t first = earliest_after(now - cfg.t_max);
  if (cum[last] - cum[first] < cfg.l_min) {
    // Too little travel: look further back, up to twice the nominal window.
    std::size_t j = first;
    while (j > 0 && frame_times[j - 1] >= now - 2.0 * cfg.t_max - kTimeEps && cum[last] - cum[j] < cfg.l_min) {
      --j;
    }
    first = j;
  }
  if (cfg.num_frames > 1) {
    const double reach = (cfg.num_frames - 1) * cfg.max_spacing;
    while (first < last && cum[last] - cum[first] > reach) {
      ++first;
    }
  }
  return first;
}

}  // namespace detail

/// Selects N frame indices evenly spaced in travelled distance over the recent
/// window ending at the latest frame at or before `now`.
///
/// Targets sit at first + (i/(N-1)) * L along the window; each picks the frame
/// with the nearest cumulative distance (ties to the earlier index). The last
/// index is always the latest frame. A stationary window repeats the latest
/// frame N times.
inline std::vector<std::size_t> select_clip_frames(std::span<const StampedPose> poses,
                                                   std::span<const double> frame_times, double now,
                                                   const SamplerConfig& cfg) {
  validate(cfg);
  if (frame_times.empty() || now < frame_times.front()) {
    throw ConfigError("select_clip_frames: empty window (no frame at or before now)");
  }
  for (std::size_t i = 1; i < frame_times.size(); ++i) {
    if (frame_times[i] < frame_times[i - 1]) {
      throw DomainError("select_clip_frames: frame times must be sorted");
    }
  }
  const ArcLengthClock clock(poses);
  const auto last = static_cast<std::size_t>(
      std::upper_bound(frame_times.begin(), frame_times.end(), now + detail::kTimeEps) - frame_times.begin() - 1);

  std::vector<double> cum(last + 1);
  for (std::size_t i = 0; i <= last; ++i) {
    cum[i] = clock.at(frame_times[i]);
  }
  const auto n = static_cast<std::size_t>(cfg.num_frames);
  const std::size_t first = detail::clip_window_start(frame_times, cum, last, now, cfg);
  const double span_len = cum[last] - cum[first];
  if (n == 1 || span_len < detail::kStationaryArc) {
    return std::vector<std::size_t>(n, last);
  }

  const auto begin = cum.begin() + static_cast<std::ptrdiff_t>(first);
  const auto end = cum.begin() + static_cast<std::ptrdiff_t>(last) + 1;
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double target = cum[first] + span_len * static_cast<double>(i) / static_cast<double>(n - 1);
    const auto hi = std::lower_bound(begin, end, target);
    std::size_t pick;
    if (hi == end) {
      pick = static_cast<std::size_t>(std::lower_bound(begin, end, *(end - 1)) - cum.begin());
    } else if (hi == begin) {
      pick = first;
    } else {
      const double below = *(hi - 1);
      const auto below_first = std::lower_bound(begin, end, below);
      pick = (target - below <= *hi - target) ? static_cast<std::size_t>(below_first - cum.begin())
                                              : static_cast<std::size_t>(hi - cum.begin());
    }
    out.push_back(pick);
  }
  out.push_back(last);
  return out;
}

/// Frame timestamps at the configured rate covering [t0, t1].
inline std::vector<double> frame_clock(double t0, double t1, double fps) {
  std::vector<double> times;
  for (long k = 0;; ++k) {
    const double t = t0 + static_cast<double>(k) / fps;
    if (t > t1 + detail::kTimeEps) {
      break;
    }
    times.push_back(t);
  }
  return times;
}

}  // namespace xvloc
