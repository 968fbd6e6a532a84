#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "xvloc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace xvloc;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out_dir{"."};
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Top-level seed; overrides the config's `seed`");
  app->add_option("--config", c.config_path, "JSON config overlay (unknown keys are rejected)");
  app->add_option("--out-dir", c.out_dir, "Directory for outputs (created if missing)");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  if (c.seed) {
    cfg.seed = *c.seed;
  }
  return cfg;
}

fs::path out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir) / name;
}

void write_json(const fs::path& p, const nlohmann::ordered_json& j) {
  std::ofstream os(p);
  if (!os) {
    throw std::runtime_error("cannot write " + p.string());
  }
  os << j.dump(2) << '\n';
}

/// World file = the `world` config section; other sections come from --config.
void load_world_into(const std::string& path, RunConfig& cfg) {
  std::ifstream is(path);
  if (!is) {
    throw ConfigKeyError("<world>", "cannot open world file " + path);
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigKeyError("<world>", std::string("invalid JSON: ") + e.what());
  }
  cfg = config_from_json(nlohmann::json{{"world", j}}, cfg);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) {
    throw std::runtime_error("cannot write " + p.string());
  }
  return os;
}

Pose parse_pose(const std::string& s) {
  std::stringstream ss(s);
  std::string cell;
  std::vector<double> v;
  while (std::getline(ss, cell, ',')) {
    try {
      v.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ConfigKeyError("--pose", "expected x,y,theta");
    }
  }
  if (v.size() != 3) {
    throw ConfigKeyError("--pose", "expected x,y,theta");
  }
  return {v[0], v[1], v[2]};
}

std::string default_config_footer() {
  return "\nDefault config (any subset may be given to --config):\n" + to_json(RunConfig{}).dump(2) + "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-view video localization on a synthetic multi-season world"};
  app.require_subcommand(1);
  app.footer(default_config_footer());

  Common sim_c;
  bool export_pgm = false;
  auto* sim = app.add_subcommand("sim-world", "Write the world description; --seed sets the world seed");
  add_common(sim, sim_c);
  sim->add_flag("--export-pgm", export_pgm, "Also write one overview PGM per season");

  Common traj_c;
  std::string traj_world;
  auto* gen = app.add_subcommand("gen-traj", "Generate a ground-truth trajectory CSV");
  add_common(gen, traj_c);
  gen->add_option("--world", traj_world, "World JSON from sim-world")->required();

  Common train_c;
  std::string train_world;
  std::vector<std::string> train_trajs;
  auto* train = app.add_subcommand("train", "Two-stage training; writes model.json and loss curves");
  add_common(train, train_c);
  train->add_option("--world", train_world, "World JSON from sim-world")->required();
  train->add_option("--trajectory", train_trajs,
                    "Training drives (CSV, repeatable); default: model.train_trajectories generated drives");

  Common loc_c;
  std::string loc_world;
  std::string loc_traj;
  std::string loc_model;
  auto* loc = app.add_subcommand("localize", "Run the particle filter along a trajectory");
  add_common(loc, loc_c);
  loc->add_option("--world", loc_world, "World JSON")->required();
  loc->add_option("--trajectory", loc_traj, "Ground-truth trajectory CSV")->required();
  loc->add_option("--model", loc_model, "Checkpoint from train (omit with localization.measurements=false)");

  Common fl_c;
  std::string fl_world;
  std::string fl_model;
  std::string fl_pose;
  auto* fl = app.add_subcommand("frame-localize", "Likelihood map of one query frame over a candidate grid");
  add_common(fl, fl_c);
  fl->add_option("--world", fl_world, "World JSON")->required();
  fl->add_option("--model", fl_model, "Checkpoint from train")->required();
  fl->add_option("--pose", fl_pose, "Query pose x,y,theta (m, m, rad)")->required();

  Common ev_c;
  std::string ev_pred;
  std::string ev_gt;
  auto* ev = app.add_subcommand("eval", "ATE / SDR / SR report for a predicted trajectory");
  add_common(ev, ev_c);
  ev->add_option("pred", ev_pred, "Predicted trajectory CSV")->required();
  ev->add_option("gt", ev_gt, "Ground-truth trajectory CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*sim) {
      RunConfig cfg = resolve(sim_c);
      cfg.world.seed = cfg.seed;
      const WorldModel world = build_world(cfg.world);
      write_json(out_path(sim_c, "world.json"), to_json(cfg)["world"]);
      if (export_pgm) {
        // North-up overview at 2 m per pixel.
        const int res = static_cast<int>(world.extent() / 2.0);
        const double px = world.extent() / res;
        for (int s = 0; s < world.num_seasons(); ++s) {
          ImagePatch img(res, res, px);
          for (int r = 0; r < res; ++r) {
            for (int c = 0; c < res; ++c) {
              img.at(r, c) = world.appearance({s}, (c + 0.5) * px, world.extent() - (r + 0.5) * px);
            }
          }
          write_pgm(out_path(sim_c, "season_" + std::to_string(s) + ".pgm").string(), img);
        }
      }
    } else if (*gen) {
      RunConfig cfg = resolve(traj_c);
      load_world_into(traj_world, cfg);
      const WorldModel world = build_world(cfg.world);
      write_trajectory_csv(out_path(traj_c, "trajectory.csv").string(),
                           generate_trajectory(world, cfg.trajectory, derive_seed(cfg.seed, 0x7A7u)));
    } else if (*train) {
      RunConfig cfg = resolve(train_c);
      load_world_into(train_world, cfg);
      const WorldModel world = build_world(cfg.world);
      std::vector<Trajectory> trajs;
      for (const auto& p : train_trajs) {
        trajs.push_back(read_trajectory_csv(p));
      }
      if (trajs.empty()) {
        trajs = training_trajectories(world, cfg);
      }
      const Model m = train_model(world, cfg, trajs, [](const std::string& s) { std::cerr << s << '\n'; });
      save_model(out_path(train_c, "model.json").string(), m);
      auto s1 = open_out(out_path(train_c, "loss_stage1.csv"));
      write_curve_csv(s1, m.stage1_curve);
      auto s2 = open_out(out_path(train_c, "loss_stage2.csv"));
      write_curve_csv(s2, m.stage2_curve);
    } else if (*loc) {
      RunConfig cfg = resolve(loc_c);
      load_world_into(loc_world, cfg);
      const WorldModel world = build_world(cfg.world);
      const Trajectory gt = read_trajectory_csv(loc_traj);
      LocalizationResult r;
      if (loc_model.empty()) {
        if (cfg.localization.measurements) {
          throw ConfigKeyError("--model", "required unless localization.measurements is false");
        }
        r = run_localization(world, gt, nullptr, localization_config(cfg), cfg.seed);
      } else {
        r = localize(world, gt, load_model(loc_model), cfg, cfg.seed);
      }
      auto os = open_out(out_path(loc_c, "estimates.csv"));
      write_estimates_csv(os, r);
      write_json(out_path(loc_c, "diagnostics.json"), diagnostics_json(r));
    } else if (*fl) {
      RunConfig cfg = resolve(fl_c);
      load_world_into(fl_world, cfg);
      const WorldModel world = build_world(cfg.world);
      const Model m = load_model(fl_model);
      const Pose gt = parse_pose(fl_pose);
      const auto clip = render_ground_clip(world, {StampedPose{0.0, gt}}, cfg.localization.ground_season,
                                           cfg.localization.ground_noise, derive_seed(cfg.seed, 0xF1u), cfg.camera);
      const Embedding e = encode(m.encoder, clip.frames.front(), Branch::ground);
      const NeuralObservationModel obs(world, m.encoder, nullptr, localization_config(cfg).observation);
      const LikelihoodMap lm = likelihood_map(
          world, gt, gt.theta, [&](std::span<const Pose> ps) { return obs.score(e, ps); }, cfg.likelihood_map);
      auto os = open_out(out_path(fl_c, "likelihood.csv"));
      for (int j = lm.grid - 1; j >= 0; --j) {
        for (int i = 0; i < lm.grid; ++i) {
          os << (i ? "," : "") << detail::format_double(lm.scores[static_cast<std::size_t>(j * lm.grid + i)]);
        }
        os << '\n';
      }
      write_pgm(out_path(fl_c, "likelihood.pgm").string(), likelihood_image(lm));
      write_json(out_path(fl_c, "likelihood.json"), to_json(lm));
      std::cout << "gt_rank_percentile " << detail::format_double(lm.gt_rank_percentile) << '\n';
    } else if (*ev) {
      resolve(ev_c);
      const MetricsReport rep = evaluate(read_trajectory_csv(ev_pred), read_trajectory_csv(ev_gt));
      const auto j = to_json(rep);
      write_json(out_path(ev_c, "metrics.json"), j);
      std::cout << j.dump(2) << '\n';
    }
  } catch (const ConfigKeyError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
