#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "xvloc/aggregation.hpp"
#include "xvloc/encoder.hpp"
#include "xvloc/eval.hpp"
#include "xvloc/mcl.hpp"
#include "xvloc/mining.hpp"
#include "xvloc/training.hpp"
#include "xvloc/world.hpp"

namespace xvloc {

/// Bad configuration value or unknown key; `key_path` is dotted, e.g. "filter.gamma".
struct ConfigKeyError : ConfigError {
  ConfigKeyError(const std::string& path, const std::string& what)
      : ConfigError(path + ": " + what), key_path(path) {}
  std::string key_path;
};

/// Where ground clips and aerial samples come from, excluding the camera and clip sampler.
struct SourceSection {
  SeasonId ground_season{0};
  double ground_noise{0.02};
  std::vector<SeasonId> aerial_seasons{{0}, {1}, {2}};
  double patch_side{20.0};
  int patch_resolution{32};
  bool augment{true};
  AugmentationRanges augmentation;
};

struct LocalizationSection {
  SeasonId map_season{0};
  SeasonId ground_season{0};
  double ground_noise{0.02};
  double update_interval{1.0};
  bool measurements{true};
};

struct ModelSection {
  double quality_width_scale{0.25};
  bool stage2{true};
  int train_trajectories{20};
  std::uint64_t init_seed{11};
};

/// Every knob of the pipeline; all random processes derive from the top-level seed.
struct RunConfig {
  std::uint64_t seed{1};
  WorldConfig world;
  TrajectoryConfig trajectory;
  CameraConfig camera;
  EncoderConfig encoder;
  MiningConfig mining;
  SourceSection source;
  SamplerConfig sampler;
  TrainingConfig training;
  AggregationConfig aggregation;
  ModelSection model;
  FilterConfig filter;
  OdometryNoise odometry;
  LocalizationSection localization;
  LikelihoodMapConfig likelihood_map;
};

namespace detail {

class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ConfigKeyError(path_.empty() ? "<root>" : path_, "expected an object");
    }
  }

  template <class T>
  void operator()(const char* key, T& value) {
    if (const auto* v = take(key)) {
      read(*v, join(key), value);
    }
  }

  template <class F>
  void section(const char* key, F&& fn) {
    if (const auto* v = take(key)) {
      JsonReader sub(*v, join(key));
      fn(sub);
      sub.finish();
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) {
        throw ConfigKeyError(join(k.c_str()), "unknown key");
      }
    }
  }

 private:
  const nlohmann::json* take(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  [[nodiscard]] std::string join(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  static void read(const nlohmann::json& v, const std::string& p, double& out) {
    if (!v.is_number()) {
      throw ConfigKeyError(p, "expected a number");
    }
    out = v.get<double>();
  }
  static void read(const nlohmann::json& v, const std::string& p, int& out) {
    if (!v.is_number_integer()) {
      throw ConfigKeyError(p, "expected an integer");
    }
    out = v.get<int>();
  }
  static void read(const nlohmann::json& v, const std::string& p, std::uint64_t& out) {
    if (!v.is_number_unsigned()) {
      throw ConfigKeyError(p, "expected a nonnegative integer");
    }
    out = v.get<std::uint64_t>();
  }
  static void read(const nlohmann::json& v, const std::string& p, bool& out) {
    if (!v.is_boolean()) {
      throw ConfigKeyError(p, "expected true or false");
    }
    out = v.get<bool>();
  }
  static void read(const nlohmann::json& v, const std::string& p, SeasonId& out) { read(v, p, out.tau); }
  static void read(const nlohmann::json& v, const std::string& p, std::vector<SeasonId>& out) {
    if (!v.is_array()) {
      throw ConfigKeyError(p, "expected an array of season indices");
    }
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      SeasonId s;
      read(v[i], p + "[" + std::to_string(i) + "]", s);
      out.push_back(s);
    }
  }
  static void read(const nlohmann::json& v, const std::string& p, std::vector<double>& out) {
    if (!v.is_array()) {
      throw ConfigKeyError(p, "expected an array of numbers");
    }
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      double d = 0.0;
      read(v[i], p + "[" + std::to_string(i) + "]", d);
      out.push_back(d);
    }
  }
  static void read(const nlohmann::json& v, const std::string& p, BranchMode& out) {
    const auto s = v.is_string() ? v.get<std::string>() : "";
    if (s != "shared" && s != "separate") {
      throw ConfigKeyError(p, "expected \"shared\" or \"separate\"");
    }
    out = s == "shared" ? BranchMode::shared : BranchMode::separate;
  }
  static void read(const nlohmann::json& v, const std::string& p, KdeBandwidthMode& out) {
    const auto s = v.is_string() ? v.get<std::string>() : "";
    if (s != "scott" && s != "fixed") {
      throw ConfigKeyError(p, "expected \"scott\" or \"fixed\"");
    }
    out = s == "scott" ? KdeBandwidthMode::scott : KdeBandwidthMode::fixed;
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

class JsonWriter {
 public:
  template <class T>
  void operator()(const char* key, const T& value) {
    j_[key] = write(value);
  }

  template <class F>
  void section(const char* key, F&& fn) {
    JsonWriter sub;
    fn(sub);
    j_[key] = std::move(sub.j_);
  }

  [[nodiscard]] nlohmann::ordered_json result() const { return j_; }

 private:
  template <class T>
  static nlohmann::ordered_json write(const T& v) {
    return v;
  }
  static nlohmann::ordered_json write(const SeasonId& s) { return s.tau; }
  static nlohmann::ordered_json write(const std::vector<SeasonId>& v) {
    auto a = nlohmann::ordered_json::array();
    for (const auto& s : v) {
      a.push_back(s.tau);
    }
    return a;
  }
  static nlohmann::ordered_json write(BranchMode m) { return m == BranchMode::shared ? "shared" : "separate"; }
  static nlohmann::ordered_json write(KdeBandwidthMode m) { return m == KdeBandwidthMode::scott ? "scott" : "fixed"; }

  nlohmann::ordered_json j_ = nlohmann::ordered_json::object();
};

template <class V, class C>
void visit_config(V& v, C& c) {
  v("seed", c.seed);
  v.section("world", [&](auto& s) {
    auto& w = c.world;
    s("seed", w.seed);
    s("extent", w.extent);
    s("num_seasons", w.num_seasons);
    s("raster_resolution", w.raster_resolution);
    s("structure_wavelengths", w.structure_wavelengths);
    s("structure_amplitudes", w.structure_amplitudes);
    s("trail_count", w.trail_count);
    s("trail_width", w.trail_width);
    s("trail_level", w.trail_level);
    s("season_noise_sigma", w.season_noise_sigma);
    s("season_noise_wavelength", w.season_noise_wavelength);
    s("season_log_gamma_range", w.season_log_gamma_range);
  });
  v.section("trajectory", [&](auto& s) {
    auto& t = c.trajectory;
    s("length", t.length);
    s("speed_min", t.speed_min);
    s("speed_max", t.speed_max);
    s("dt", t.dt);
    s("margin", t.margin);
    s("max_curvature", t.max_curvature);
  });
  v.section("camera", [&](auto& s) {
    auto& k = c.camera;
    s("rows", k.rows);
    s("cols", k.cols);
    s("near", k.near);
    s("depth", k.depth);
    s("half_fov", k.half_fov);
  });
  v.section("encoder", [&](auto& s) {
    auto& e = c.encoder;
    s("frozen_dim", e.frozen_dim);
    s("hidden_dim", e.hidden_dim);
    s("embedding_dim", e.embedding_dim);
    s("branch_mode", e.branch_mode);
    s("projection_seed", e.projection_seed);
    s("frozen_pool", e.frozen_pool);
  });
  v.section("mining", [&](auto& s) {
    auto& m = c.mining;
    s("d_min", m.d_min);
    s("d_max", m.d_max);
    s("delta_theta", m.delta_theta);
    s("num_candidates", m.num_candidates);
    s("num_negatives_per_anchor", m.num_negatives_per_anchor);
  });
  v.section("source", [&](auto& s) {
    auto& r = c.source;
    s("ground_season", r.ground_season);
    s("ground_noise", r.ground_noise);
    s("aerial_seasons", r.aerial_seasons);
    s("patch_side", r.patch_side);
    s("patch_resolution", r.patch_resolution);
    s("augment", r.augment);
    s.section("augmentation", [&](auto& a) {
      a("brightness", r.augmentation.brightness);
      a("contrast", r.augmentation.contrast);
      a("min_crop", r.augmentation.min_crop);
      a("max_offset", r.augmentation.max_offset);
    });
  });
  v.section("sampler", [&](auto& s) {
    auto& f = c.sampler;
    s("N", f.num_frames);
    s("T_max_s", f.t_max);
    s("L_min_m", f.l_min);
    s("max_spacing_m", f.max_spacing);
    s("fps", f.fps);
  });
  v.section("training", [&](auto& s) {
    auto& t = c.training;
    s("alpha", t.alpha);
    s("lambda_sim", t.lambda_sim);
    s("lambda_h", t.lambda_h);
    s("lr", t.lr);
    s("grad_clip_norm", t.grad_clip_norm);
    s("plateau_factor", t.plateau_factor);
    s("plateau_patience", t.plateau_patience);
    s("max_epochs_stage1", t.max_epochs_stage1);
    s("max_epochs_stage2", t.max_epochs_stage2);
    s("batch_size", t.batch_size);
    s("average_negatives", t.average_negatives);
    s("val_fraction", t.val_fraction);
    s("anchor_spacing", t.anchor_spacing);
    s("stage2_corrupt_prob", t.stage2_corrupt_prob);
    s("stage2_corrupt_sigma", t.stage2_corrupt_sigma);
  });
  v.section("aggregation", [&](auto& s) {
    s("beta", c.aggregation.beta);
    s("renormalize_agg", c.aggregation.renormalize_agg);
  });
  v.section("model", [&](auto& s) {
    s("quality_width_scale", c.model.quality_width_scale);
    s("stage2", c.model.stage2);
    s("train_trajectories", c.model.train_trajectories);
    s("init_seed", c.model.init_seed);
  });
  v.section("filter", [&](auto& s) {
    auto& f = c.filter;
    s("num_particles", f.num_particles);
    s("init_sigma_xy", f.init_sigma_xy);
    s("init_sigma_theta", f.init_sigma_theta);
    s("trans_per_m", f.motion.trans_per_m);
    s("rot_per_rad", f.motion.rot_per_rad);
    s("trans_min", f.motion.trans_min);
    s("rot_min", f.motion.rot_min);
    s("lambda_base", f.lambda_base);
    s("gamma", f.gamma);
    s("kde_bandwidth_mode", f.kde_bandwidth_mode);
    s("kde_fixed_h", f.kde_fixed_h);
    s("kde_h_floor", f.kde_h_floor);
    s("kde_grid_resolution", f.kde_grid_resolution);
    s("kde_pad", f.kde_pad);
    s("ess_threshold_fraction", f.ess_threshold_fraction);
  });
  v.section("odometry", [&](auto& s) {
    auto& o = c.odometry;
    s("scale_sigma", o.scale_sigma);
    s("heading_bias_per_m_sigma", o.heading_bias_per_m_sigma);
    s("trans_per_m", o.trans_per_m);
    s("rot_per_m", o.rot_per_m);
  });
  v.section("localization", [&](auto& s) {
    auto& l = c.localization;
    s("map_season", l.map_season);
    s("ground_season", l.ground_season);
    s("ground_noise", l.ground_noise);
    s("update_interval", l.update_interval);
    s("measurements", l.measurements);
  });
  v.section("likelihood_map", [&](auto& s) {
    s("grid", c.likelihood_map.grid);
    s("map_side", c.likelihood_map.map_side);
    s("patch_side", c.likelihood_map.patch_side);
  });
}

}  // namespace detail

/// Overlays `j` on the defaults. Unknown keys and wrong types throw ConfigKeyError.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {}) {
  detail::JsonReader r(j, "");
  detail::visit_config(r, base);
  r.finish();
  return base;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  detail::JsonWriter w;
  detail::visit_config(w, c);
  return w.result();
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    throw ConfigKeyError("<file>", "cannot open config " + path);
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigKeyError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

// Views of the run config as module configs.

inline TripletSourceConfig triplet_source(const RunConfig& c, bool clips) {
  TripletSourceConfig s;
  s.camera = c.camera;
  s.ground_season = c.source.ground_season;
  s.ground_noise = c.source.ground_noise;
  s.aerial_seasons = c.source.aerial_seasons;
  s.patch_side = c.source.patch_side;
  s.patch_resolution = c.source.patch_resolution;
  s.augment = c.source.augment;
  s.augmentation = c.source.augmentation;
  if (clips) {
    s.clip = c.sampler;
  }
  return s;
}

inline EncoderConfig encoder_config(const RunConfig& c) {
  EncoderConfig e = c.encoder;
  e.input_rows = c.source.patch_resolution;
  e.input_cols = c.source.patch_resolution;
  return e;
}

inline LocalizationConfig localization_config(const RunConfig& c) {
  LocalizationConfig l;
  l.filter = c.filter;
  l.odometry = c.odometry;
  l.observation.map_season = c.localization.map_season;
  l.observation.patch_side = c.source.patch_side;
  l.observation.patch_resolution = c.source.patch_resolution;
  l.observation.aggregation = c.aggregation;
  l.camera = c.camera;
  l.sampler = c.sampler;
  l.ground_season = c.localization.ground_season;
  l.ground_noise = c.localization.ground_noise;
  l.update_interval = c.localization.update_interval;
  l.measurements = c.localization.measurements;
  return l;
}

}  // namespace xvloc
