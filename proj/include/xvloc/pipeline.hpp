#pragma once

#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xvloc/config.hpp"

namespace xvloc {

inline constexpr const char* kCheckpointMagic = "xvloc-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Trained matcher: encoder plus optional frame-quality MLP.
struct Model {
  EncoderParams encoder;
  std::optional<QualityMlpParams> quality;
  std::vector<LossCurveRow> stage1_curve;
  std::vector<LossCurveRow> stage2_curve;
};

inline nlohmann::json curve_json(const std::vector<LossCurveRow>& curve) {
  auto a = nlohmann::json::array();
  for (const auto& r : curve) {
    a.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"lr", r.lr}});
  }
  return a;
}

inline nlohmann::json to_json(const Model& m) {
  nlohmann::json j{{"magic", kCheckpointMagic}, {"version", kCheckpointVersion}, {"encoder", to_json(m.encoder)}};
  if (m.quality) {
    j["quality"] = nn::to_json(*m.quality);
  }
  return j;
}

inline Model model_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("magic", "") != kCheckpointMagic) {
    throw ConfigError("checkpoint: missing magic string");
  }
  if (j.value("version", -1) != kCheckpointVersion) {
    throw ConfigError("checkpoint: unsupported version");
  }
  Model m;
  m.encoder = encoder_from_json(j.at("encoder"));
  if (j.contains("quality")) {
    m.quality = nn::mlp_from_json(j.at("quality"));
    if (m.quality->input_dim() != m.encoder.embedding_dim() + 1 || m.quality->output_dim() != 1) {
      throw ShapeError("checkpoint: quality MLP does not match the encoder");
    }
  }
  return m;
}

inline void save_model(const std::string& path, const Model& m) {
  std::ofstream os(path);
  if (!os) {
    throw std::runtime_error("cannot write " + path);
  }
  os << to_json(m).dump() << '\n';
}

inline Model load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("cannot read " + path);
  }
  try {
    return model_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

/// Trajectories used for training; seeds are disjoint from evaluation drives.
inline std::vector<Trajectory> training_trajectories(const WorldModel& world, const RunConfig& cfg) {
  std::vector<Trajectory> out;
  for (int k = 0; k < cfg.model.train_trajectories; ++k) {
    out.push_back(generate_trajectory(world, cfg.trajectory, derive_seed(cfg.seed, 0x7EA1u, static_cast<std::uint64_t>(k))));
  }
  return out;
}

using ProgressFn = std::function<void(const std::string&)>;

/// Stage 1 (alignment layers) and, if enabled, stage 2 (quality MLP) on the
/// given drives.
inline Model train_model(const WorldModel& world, const RunConfig& cfg, const std::vector<Trajectory>& trajs,
                         const ProgressFn& progress = {}) {
  const auto say = [&](const std::string& s) {
    if (progress) {
      progress(s);
    }
  };
  if (cfg.camera.rows != cfg.source.patch_resolution || cfg.camera.cols != cfg.source.patch_resolution) {
    throw ConfigKeyError("camera.rows", "ground frames must match source.patch_resolution");
  }
  if (trajs.empty()) {
    throw ConfigError("train_model: no training trajectories");
  }
  TrainingConfig tcfg = cfg.training;
  tcfg.rng_seed = derive_seed(cfg.seed, 0x7EA2u);
  Model m;
  EncoderParams init(encoder_config(cfg), derive_seed(cfg.model.init_seed, cfg.seed));
  const TrainingSet s1 = build_training_set(world, trajs, init, triplet_source(cfg, false), cfg.mining, tcfg);
  say("stage 1: " + std::to_string(s1.train.size()) + " train / " + std::to_string(s1.val.size()) + " val anchors");
  auto r1 = train_stage1(s1, init, tcfg, cfg.mining);
  m.encoder = std::move(r1.encoder);
  m.stage1_curve = std::move(r1.curve);
  if (cfg.model.stage2) {
    const TrainingSet s2 = build_training_set(world, trajs, m.encoder, triplet_source(cfg, true), cfg.mining, tcfg);
    say("stage 2: " + std::to_string(s2.train.size()) + " train / " + std::to_string(s2.val.size()) + " val clips");
    auto mlp = make_quality_mlp(m.encoder.embedding_dim(), cfg.model.quality_width_scale,
                                derive_seed(cfg.model.init_seed, cfg.seed, 2));
    auto r2 = train_stage2(s2, m.encoder, std::move(mlp), tcfg, cfg.aggregation, cfg.mining);
    m.quality = std::move(r2.mlp);
    m.stage2_curve = std::move(r2.curve);
  }
  return m;
}

/// Training on drives generated from the run seed.
inline Model train_model(const WorldModel& world, const RunConfig& cfg, const ProgressFn& progress = {}) {
  return train_model(world, cfg, training_trajectories(world, cfg), progress);
}

inline LocalizationResult localize(const WorldModel& world, const Trajectory& gt, const Model& model,
                                   const RunConfig& cfg, std::uint64_t seed) {
  const LocalizationConfig lcfg = localization_config(cfg);
  const NeuralObservationModel obs(world, model.encoder, model.quality ? &*model.quality : nullptr, lcfg.observation);
  return run_localization(world, gt, &obs, lcfg, seed);
}

inline void write_curve_csv(std::ostream& os, const std::vector<LossCurveRow>& curve) {
  os << "epoch,train_loss,val_loss,lr\n";
  for (const auto& r : curve) {
    os << r.epoch << ',' << detail::format_double(r.train_loss) << ',' << detail::format_double(r.val_loss) << ','
       << detail::format_double(r.lr) << '\n';
  }
}

/// One entry per measurement update, aligned with estimate rows 1..n.
inline nlohmann::ordered_json diagnostics_json(const LocalizationResult& r) {
  auto a = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < r.diagnostics.size(); ++k) {
    const auto& d = r.diagnostics[k];
    a.push_back({{"t", r.rows[k + 1].t},
                 {"H_t", d.entropy},
                 {"lambda_t", d.lambda},
                 {"ess", d.ess},
                 {"resampled", d.resampled},
                 {"out_of_bounds", d.out_of_bounds},
                 {"frame_weights", d.frame_weights}});
  }
  return a;
}

inline void write_estimates_csv(std::ostream& os, const LocalizationResult& r) {
  os << "t,x,y,theta,H_t,lambda_t,ess\n";
  for (const auto& e : r.rows) {
    os << detail::format_double(e.t) << ',' << detail::format_double(e.pose.x) << ','
       << detail::format_double(e.pose.y) << ',' << detail::format_double(e.pose.theta) << ','
       << detail::format_double(e.entropy) << ',' << detail::format_double(e.lambda) << ','
       << detail::format_double(e.ess) << '\n';
  }
}

}  // namespace xvloc
