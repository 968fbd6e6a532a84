#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xvloc/core.hpp"
#include "xvloc/world.hpp"

namespace xvloc {

/// Per-frame position errors after nearest-timestamp association. Each
/// prediction must lie within half the local ground-truth spacing of a
/// distinct ground-truth stamp.
struct Association {
  std::vector<std::size_t> gt_index;  // per prediction
  std::vector<double> errors;
};

inline Association associate(const Trajectory& pred, const Trajectory& gt) {
  if (pred.empty() || gt.empty()) {
    throw ConfigError("associate: empty trajectory");
  }
  Association a;
  std::size_t prev = gt.size();
  for (const auto& p : pred) {
    const auto it = std::lower_bound(gt.begin(), gt.end(), p.t,
                                     [](const StampedPose& g, double t) { return g.t < t; });
    auto k = static_cast<std::size_t>(it - gt.begin());
    if (k == gt.size() || (k > 0 && p.t - gt[k - 1].t <= gt[k].t - p.t)) {
      --k;
    }
    double spacing = std::numeric_limits<double>::infinity();
    if (k > 0) {
      spacing = std::min(spacing, gt[k].t - gt[k - 1].t);
    }
    if (k + 1 < gt.size()) {
      spacing = std::min(spacing, gt[k + 1].t - gt[k].t);
    }
    const double tol = std::isfinite(spacing) ? 0.5 * spacing : 1e-9;
    if (std::abs(p.t - gt[k].t) > tol + 1e-12) {
      throw DomainError("associate: prediction at t=" + detail::format_double(p.t) + " has no ground truth within " +
                        detail::format_double(tol) + " s");
    }
    if (k == prev) {
      throw DomainError("associate: two predictions map to the same ground-truth stamp");
    }
    prev = k;
    a.gt_index.push_back(k);
    a.errors.push_back(distance(p.pose, gt[k].pose));
  }
  return a;
}

struct AteResult {
  double mean{0.0};
  double max{0.0};
};

inline AteResult ate_from_errors(std::span<const double> errors) {
  if (errors.empty()) {
    throw ConfigError("ate: no frames");
  }
  AteResult r;
  for (double e : errors) {
    r.mean += e;
    r.max = std::max(r.max, e);
  }
  r.mean /= static_cast<double>(errors.size());
  return r;
}

inline AteResult ate(const Trajectory& pred, const Trajectory& gt) { return ate_from_errors(associate(pred, gt).errors); }

/// |arclen(pred) - arclen(gt)| / arclen(gt) in percent; gt restricted to the
/// stamps matched by the predictions.
inline double sdr(const Trajectory& pred, const Trajectory& gt) {
  if (pred.size() < 2 || gt.size() < 2) {
    throw ConfigError("sdr: need at least two poses");
  }
  const Association a = associate(pred, gt);
  double gt_len = 0.0;
  for (std::size_t i = 1; i < a.gt_index.size(); ++i) {
    gt_len += distance(gt[a.gt_index[i - 1]].pose, gt[a.gt_index[i]].pose);
  }
  if (!(gt_len > 0.0)) {
    throw DomainError("sdr: ground-truth arc length is zero");
  }
  return 100.0 * std::abs(pred.arc_length() - gt_len) / gt_len;
}

inline std::map<double, double> success_rate_from_errors(std::span<const double> errors,
                                                         std::span<const double> thresholds) {
  if (thresholds.empty()) {
    throw ConfigError("success_rate: no thresholds");
  }
  if (errors.empty()) {
    throw ConfigError("success_rate: no frames");
  }
  std::map<double, double> out;
  for (double tau : thresholds) {
    const auto hits = std::count_if(errors.begin(), errors.end(), [&](double e) { return e <= tau; });
    out[tau] = 100.0 * static_cast<double>(hits) / static_cast<double>(errors.size());
  }
  return out;
}

inline std::map<double, double> success_rate(const Trajectory& pred, const Trajectory& gt,
                                             std::span<const double> thresholds) {
  return success_rate_from_errors(associate(pred, gt).errors, thresholds);
}

inline const std::vector<double>& default_sr_thresholds() {
  static const std::vector<double> t{5.0, 10.0, 25.0, 50.0};
  return t;
}

struct MetricsReport {
  double ate_mean{0.0};
  double ate_max{0.0};
  double sdr{0.0};
  std::map<double, double> sr;
  std::size_t n_frames{0};
};

inline MetricsReport evaluate(const Trajectory& pred, const Trajectory& gt,
                              std::span<const double> thresholds = default_sr_thresholds()) {
  const Association a = associate(pred, gt);
  MetricsReport r;
  const AteResult e = ate_from_errors(a.errors);
  r.ate_mean = e.mean;
  r.ate_max = e.max;
  r.sdr = pred.size() >= 2 ? sdr(pred, gt) : 0.0;
  r.sr = success_rate_from_errors(a.errors, thresholds);
  r.n_frames = pred.size();
  return r;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json sr = nlohmann::ordered_json::object();
  for (const auto& [tau, pct] : r.sr) {
    sr[detail::format_double(tau)] = pct;
  }
  return {{"ate_mean", r.ate_mean}, {"ate_max", r.ate_max}, {"sdr", r.sdr}, {"sr", sr}, {"n_frames", r.n_frames}};
}

// ---------------------------------------------------------------------------
// Frame-level likelihood maps

struct LikelihoodMapConfig {
  int grid{30};
  double map_side{150.0};
  double patch_side{20.0};
};

struct LikelihoodMap {
  int grid{0};
  double cell_size{0.0};
  Pose center;
  double orientation_prior{0.0};
  std::vector<double> scores;  // row-major [j * grid + i], normalized to [0,1]
  std::vector<bool> off_map;
  std::size_t gt_cell{0};
  double gt_rank_percentile{0.0};

  [[nodiscard]] Pose cell_pose(int i, int j) const {
    const double half = 0.5 * cell_size * grid;
    return {center.x - half + (i + 0.5) * cell_size, center.y - half + (j + 0.5) * cell_size, orientation_prior};
  }
};

/// 100 * average descending rank of scores[index] / n.
inline double rank_percentile(std::span<const double> scores, std::size_t index) {
  const double v = scores[index];
  std::size_t greater = 0;
  std::size_t equal = 0;
  for (double s : scores) {
    greater += static_cast<std::size_t>(s > v);
    equal += static_cast<std::size_t>(s == v);
  }
  const double rank = 1.0 + static_cast<double>(greater) + 0.5 * static_cast<double>(equal - 1);
  return 100.0 * rank / static_cast<double>(scores.size());
}

/// Min-max normalization; constant input maps to 0.5 everywhere.
inline std::vector<double> minmax_normalize(std::span<const double> raw) {
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  std::vector<double> out(raw.size(), 0.5);
  if (*hi > *lo) {
    for (std::size_t i = 0; i < raw.size(); ++i) {
      out[i] = (raw[i] - *lo) / (*hi - *lo);
    }
  }
  return out;
}

/// Batch scorer: similarity of the query observation at each candidate pose.
using PoseScorer = std::function<std::vector<double>(std::span<const Pose>)>;

/// Scores a grid of candidate poses with fixed heading around `center` and
/// ranks the cell containing the ground-truth position. Cells whose patch
/// leaves the map score 0 and are flagged.
inline LikelihoodMap likelihood_map(const WorldModel& world, const Pose& gt, const Pose& center,
                                    double orientation_prior, const PoseScorer& scorer,
                                    const LikelihoodMapConfig& cfg = {}) {
  if (cfg.grid < 1 || !(cfg.map_side > 0.0) || !(cfg.patch_side > 0.0)) {
    throw ConfigError("likelihood_map: invalid grid");
  }
  LikelihoodMap m;
  m.grid = cfg.grid;
  m.cell_size = cfg.map_side / cfg.grid;
  m.center = center;
  m.orientation_prior = orientation_prior;
  const auto n = static_cast<std::size_t>(cfg.grid) * static_cast<std::size_t>(cfg.grid);
  m.off_map.assign(n, false);
  std::vector<Pose> poses;
  std::vector<std::size_t> where;
  for (int j = 0; j < cfg.grid; ++j) {
    for (int i = 0; i < cfg.grid; ++i) {
      const Pose p = m.cell_pose(i, j);
      const std::size_t c = static_cast<std::size_t>(j) * static_cast<std::size_t>(cfg.grid) + static_cast<std::size_t>(i);
      if (aerial_footprint_inside(world, p, cfg.patch_side)) {
        poses.push_back(p);
        where.push_back(c);
      } else {
        m.off_map[c] = true;
      }
    }
  }
  std::vector<double> raw(n, 0.0);
  if (!poses.empty()) {
    const auto s = scorer(poses);
    if (s.size() != poses.size()) {
      throw ShapeError("likelihood_map: scorer returned wrong count");
    }
    for (std::size_t k = 0; k < where.size(); ++k) {
      raw[where[k]] = s[k];
    }
  }
  const double half = 0.5 * cfg.map_side;
  const auto cell_of = [&](double v, double c0) {
    return std::clamp(static_cast<int>(std::floor((v - (c0 - half)) / m.cell_size)), 0, cfg.grid - 1);
  };
  const int gi = cell_of(gt.x, center.x);
  const int gj = cell_of(gt.y, center.y);
  if (std::abs(gt.x - center.x) > half || std::abs(gt.y - center.y) > half) {
    throw DomainError("likelihood_map: ground truth outside the map");
  }
  m.gt_cell = static_cast<std::size_t>(gj) * static_cast<std::size_t>(cfg.grid) + static_cast<std::size_t>(gi);
  m.gt_rank_percentile = rank_percentile(raw, m.gt_cell);
  m.scores = minmax_normalize(raw);
  return m;
}

/// Grid placed so the ground-truth position is the center of cell (G/2, G/2),
/// making the true pose one of the G^2 candidates.
inline LikelihoodMap likelihood_map(const WorldModel& world, const Pose& gt, double orientation_prior,
                                    const PoseScorer& scorer, const LikelihoodMapConfig& cfg = {}) {
  const double shift = cfg.grid % 2 == 0 ? 0.5 * cfg.map_side / cfg.grid : 0.0;
  return likelihood_map(world, gt, {gt.x - shift, gt.y - shift, gt.theta}, orientation_prior, scorer, cfg);
}

inline nlohmann::ordered_json to_json(const LikelihoodMap& m) {
  std::size_t off = 0;
  for (bool b : m.off_map) {
    off += static_cast<std::size_t>(b);
  }
  return {{"grid", m.grid},
          {"cell_size", m.cell_size},
          {"center", {{"x", m.center.x}, {"y", m.center.y}, {"theta", m.center.theta}}},
          {"orientation_prior", m.orientation_prior},
          {"gt_cell", {{"i", m.gt_cell % static_cast<std::size_t>(m.grid)}, {"j", m.gt_cell / static_cast<std::size_t>(m.grid)}}},
          {"gt_rank_percentile", m.gt_rank_percentile},
          {"off_map_cells", off}};
}

/// Heat image of the normalized scores; row 0 is the northern (max y) edge.
inline ImagePatch likelihood_image(const LikelihoodMap& m) {
  ImagePatch img(m.grid, m.grid, m.cell_size);
  for (int j = 0; j < m.grid; ++j) {
    for (int i = 0; i < m.grid; ++i) {
      img.at(m.grid - 1 - j, i) = m.scores[static_cast<std::size_t>(j) * static_cast<std::size_t>(m.grid) + static_cast<std::size_t>(i)];
    }
  }
  return img;
}

}  // namespace xvloc
