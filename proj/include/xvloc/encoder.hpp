#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>

#include "json.hpp"
#include "xvloc/core.hpp"
#include "xvloc/nn.hpp"
#include "xvloc/world.hpp"

namespace xvloc {

/// Unit-norm feature vector.
using Embedding = Eigen::VectorXd;

enum class Branch { ground, aerial };

/// `shared`: one set of alignment layers for both branches.
/// `separate`: identical structure, independent weights.
enum class BranchMode { shared, separate };

struct EncoderConfig {
  int input_rows{32};
  int input_cols{32};
  int frozen_dim{256};
  int hidden_dim{128};
  int embedding_dim{64};
  BranchMode branch_mode{BranchMode::separate};
  std::uint64_t projection_seed{1};
  int frozen_pool{2};  // block-average factor applied before the Gaussian matrix
};

/// Frozen seeded random projection followed by trainable alignment layers.
///
/// The frozen feature map standardizes the patch (zero mean, unit variance)
/// and applies a fixed matrix: block-average pooling by `frozen_pool`, then a
/// Gaussian random matrix with entries N(0, 1/pooled_pixels). It is
/// regenerated from the seed and never trained.
class EncoderParams {
 public:
  EncoderParams() = default;

  EncoderParams(const EncoderConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    build_projection();
    Rng rng(derive_seed(init_seed, 0x414cu));
    const std::vector<int> dims{cfg.frozen_dim, cfg.hidden_dim, cfg.embedding_dim};
    ground_ = nn::Mlp(dims, rng);
    if (cfg.branch_mode == BranchMode::separate) {
      aerial_ = nn::Mlp(dims, rng);
    }
  }

  EncoderParams(const EncoderConfig& cfg, nn::Mlp ground, nn::Mlp aerial) : cfg_(cfg) {
    build_projection();
    ground_ = std::move(ground);
    if (cfg.branch_mode == BranchMode::separate) {
      aerial_ = std::move(aerial);
    }
    check_dims();
  }

  [[nodiscard]] const EncoderConfig& config() const { return cfg_; }
  [[nodiscard]] const nn::Mat& frozen_projection() const { return projection_; }
  [[nodiscard]] int embedding_dim() const { return cfg_.embedding_dim; }

  [[nodiscard]] const nn::Mlp& alignment(Branch b) const {
    return (b == Branch::aerial && cfg_.branch_mode == BranchMode::separate) ? aerial_ : ground_;
  }
  [[nodiscard]] nn::Mlp& alignment(Branch b) {
    return (b == Branch::aerial && cfg_.branch_mode == BranchMode::separate) ? aerial_ : ground_;
  }

  /// Trainable parameters as one flat vector (ground, then aerial when separate).
  [[nodiscard]] nn::Vec flat() const {
    nn::Vec v(static_cast<Eigen::Index>(num_trainable()));
    ground_.write_flat(v.data());
    if (cfg_.branch_mode == BranchMode::separate) {
      aerial_.write_flat(v.data() + ground_.num_params());
    }
    return v;
  }

  void set_flat(const nn::Vec& v) {
    if (static_cast<std::size_t>(v.size()) != num_trainable()) {
      throw ShapeError("EncoderParams::set_flat: size mismatch");
    }
    ground_.read_flat(v.data());
    if (cfg_.branch_mode == BranchMode::separate) {
      aerial_.read_flat(v.data() + ground_.num_params());
    }
  }

  [[nodiscard]] std::size_t num_trainable() const {
    return ground_.num_params() + (cfg_.branch_mode == BranchMode::separate ? aerial_.num_params() : 0);
  }

  /// Standardized pixels through the frozen projection.
  [[nodiscard]] nn::Vec frozen_features(const ImagePatch& patch) const {
    if (patch.rows != cfg_.input_rows || patch.cols != cfg_.input_cols) {
      throw ShapeError("encode: patch is " + std::to_string(patch.rows) + "x" + std::to_string(patch.cols) +
                       ", encoder expects " + std::to_string(cfg_.input_rows) + "x" + std::to_string(cfg_.input_cols));
    }
    return projection_ * standardized(patch);
  }

  bool operator==(const EncoderParams& o) const {
    return cfg_.input_rows == o.cfg_.input_rows && cfg_.input_cols == o.cfg_.input_cols &&
           cfg_.frozen_dim == o.cfg_.frozen_dim && cfg_.branch_mode == o.cfg_.branch_mode &&
           cfg_.projection_seed == o.cfg_.projection_seed && cfg_.frozen_pool == o.cfg_.frozen_pool &&
           ground_ == o.ground_ && aerial_ == o.aerial_;
  }

  static nn::Vec standardized(const ImagePatch& patch) {
    const Eigen::Map<const nn::Vec> px(patch.pixels.data(), static_cast<Eigen::Index>(patch.pixels.size()));
    const double mean = px.mean();
    const double var = (px.array() - mean).square().mean();
    const double sd = std::max(std::sqrt(var), 1e-3);
    return (px.array() - mean) / sd;
  }

 private:
  void build_projection() {
    const int pixels = cfg_.input_rows * cfg_.input_cols;
    const int pool = cfg_.frozen_pool;
    if (pixels < 16 || cfg_.frozen_dim < 1 || cfg_.hidden_dim < 1 || cfg_.embedding_dim < 1 || pool < 1 ||
        cfg_.input_rows % pool != 0 || cfg_.input_cols % pool != 0) {
      throw ConfigError("EncoderConfig: invalid dimensions");
    }
    const int pr = cfg_.input_rows / pool;
    const int pc = cfg_.input_cols / pool;
    nn::Mat gauss(cfg_.frozen_dim, pr * pc);
    Rng rng(derive_seed(cfg_.projection_seed, 0x50524fu));
    const double sigma = 1.0 / std::sqrt(static_cast<double>(pr * pc));
    for (Eigen::Index i = 0; i < gauss.size(); ++i) {
      gauss.data()[i] = rng.normal(0.0, sigma);
    }
    nn::Mat pooling = nn::Mat::Zero(pr * pc, pixels);
    const double w = 1.0 / (pool * pool);
    for (int r = 0; r < cfg_.input_rows; ++r) {
      for (int c = 0; c < cfg_.input_cols; ++c) {
        pooling((r / pool) * pc + c / pool, r * cfg_.input_cols + c) = w;
      }
    }
    projection_ = gauss * pooling;
  }

  void check_dims() const {
    auto check = [&](const nn::Mlp& m) {
      if (m.input_dim() != cfg_.frozen_dim || m.output_dim() != cfg_.embedding_dim) {
        throw ShapeError("EncoderParams: alignment layers do not match configured dims");
      }
    };
    check(ground_);
    if (cfg_.branch_mode == BranchMode::separate) {
      check(aerial_);
    }
  }

  EncoderConfig cfg_;
  nn::Mat projection_;
  nn::Mlp ground_;
  nn::Mlp aerial_;
};

/// Returns v / ||v||; throws on a zero vector.
inline Embedding l2_normalize(const nn::Vec& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw DomainError("l2_normalize: zero or non-finite vector");
  }
  return v / n;
}

/// Alignment layers applied to precomputed frozen features, then normalized.
inline Embedding encode_features(const EncoderParams& params, const nn::Vec& features, Branch branch) {
  return l2_normalize(params.alignment(branch).forward(features));
}

inline Embedding encode(const EncoderParams& params, const ImagePatch& patch, Branch branch) {
  return encode_features(params, params.frozen_features(patch), branch);
}

/// Column-batched encoding of frozen features; columns of the result are unit-norm.
inline nn::Mat encode_features_batch(const EncoderParams& params, const nn::Mat& features, Branch branch) {
  nn::Mat out = params.alignment(branch).forward_batch(features);
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const double n = out.col(c).norm();
    if (!(n > 0.0)) {
      throw DomainError("encode: zero embedding");
    }
    out.col(c) /= n;
  }
  return out;
}

inline double cosine(const nn::Vec& a, const nn::Vec& b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine: dimension mismatch");
  }
  const double denom = a.norm() * b.norm();
  if (!(denom > 0.0)) {
    throw DomainError("cosine: zero vector");
  }
  return a.dot(b) / denom;
}

/// Matching score in [0,1]: (1 + cos) / 2.
inline double similarity_score(const Embedding& e_ground, const Embedding& e_aerial) {
  if (e_ground.size() != e_aerial.size()) {
    throw ShapeError("similarity_score: dimension mismatch");
  }
  return std::clamp(0.5 * (1.0 + e_ground.dot(e_aerial)), 0.0, 1.0);
}

inline nlohmann::json to_json(const EncoderParams& p) {
  const auto& c = p.config();
  nlohmann::json j{{"input_rows", c.input_rows},
                   {"input_cols", c.input_cols},
                   {"frozen_dim", c.frozen_dim},
                   {"hidden_dim", c.hidden_dim},
                   {"embedding_dim", c.embedding_dim},
                   {"branch_mode", c.branch_mode == BranchMode::shared ? "shared" : "separate"},
                   {"projection_seed", c.projection_seed},
                   {"frozen_pool", c.frozen_pool},
                   {"ground", nn::to_json(p.alignment(Branch::ground))}};
  if (c.branch_mode == BranchMode::separate) {
    j["aerial"] = nn::to_json(p.alignment(Branch::aerial));
  }
  return j;
}

inline EncoderParams encoder_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.input_rows = j.at("input_rows").get<int>();
  c.input_cols = j.at("input_cols").get<int>();
  c.frozen_dim = j.at("frozen_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.embedding_dim = j.at("embedding_dim").get<int>();
  const auto mode = j.at("branch_mode").get<std::string>();
  if (mode != "shared" && mode != "separate") {
    throw ConfigError("checkpoint: unknown branch_mode '" + mode + "'");
  }
  c.branch_mode = mode == "shared" ? BranchMode::shared : BranchMode::separate;
  c.projection_seed = j.at("projection_seed").get<std::uint64_t>();
  c.frozen_pool = j.at("frozen_pool").get<int>();
  nn::Mlp ground = nn::mlp_from_json(j.at("ground"));
  nn::Mlp aerial = c.branch_mode == BranchMode::separate ? nn::mlp_from_json(j.at("aerial")) : nn::Mlp{};
  return EncoderParams(c, std::move(ground), std::move(aerial));
}

}  // namespace xvloc
