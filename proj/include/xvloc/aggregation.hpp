#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "xvloc/encoder.hpp"
#include "xvloc/nn.hpp"

namespace xvloc {

/// Frame-quality predictor: [d+1] -> hidden -> hidden -> 1 with rectifiers.
using QualityMlpParams = nn::Mlp;

/// Hidden widths scale the reference [256, 128] by `width_scale`.
inline QualityMlpParams make_quality_mlp(int embedding_dim, double width_scale, std::uint64_t seed) {
  const int h1 = std::max(1, static_cast<int>(std::lround(256 * width_scale)));
  const int h2 = std::max(1, static_cast<int>(std::lround(128 * width_scale)));
  Rng rng(derive_seed(seed, 0x514du));
  return nn::Mlp({embedding_dim + 1, h1, h2, 1}, rng);
}

struct AggregationConfig {
  double beta{1.0};  // softmax temperature
  bool renormalize_agg{false};
};

struct AggregationResult {
  nn::Vec e_agg;
  std::vector<double> weights;
  std::vector<double> cosines;
  std::vector<double> scores;
};

/// Numerically stable softmax of o / beta.
inline std::vector<double> softmax(std::span<const double> o, double beta) {
  if (!(beta > 0.0)) {
    throw ConfigError("softmax: beta must be > 0");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : o) {
    mx = std::max(mx, v);
  }
  std::vector<double> w(o.size());
  double total = 0.0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    w[i] = std::exp((o[i] - mx) / beta);
    total += w[i];
  }
  for (double& v : w) {
    v /= total;
  }
  return w;
}

/// H(w) = -sum w log w in nats, with 0 log 0 = 0.
inline double weight_entropy(std::span<const double> w) {
  double total = 0.0;
  double h = 0.0;
  for (double v : w) {
    if (v < 0.0 || !std::isfinite(v)) {
      throw DomainError("weight_entropy: weights must be finite and nonnegative");
    }
    total += v;
    if (v > 0.0) {
      h -= v * std::log(v);
    }
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw DomainError("weight_entropy: weights must sum to 1");
  }
  return h;
}

/// Activations kept for the backward pass of aggregate_clip.
struct AggregationTape {
  std::vector<nn::Mlp::Tape> mlp;
  nn::Vec pooled;  // sum w_i e_i before optional renormalization
};

namespace detail {

inline void check_frames(std::span<const Embedding> frames, const Embedding& aerial, const QualityMlpParams& mlp) {
  if (frames.empty()) {
    throw ShapeError("aggregate_clip: need at least one frame");
  }
  for (const auto& e : frames) {
    if (e.size() != aerial.size()) {
      throw ShapeError("aggregate_clip: frame/aerial dimension mismatch");
    }
  }
  if (mlp.input_dim() != aerial.size() + 1 || mlp.output_dim() != 1) {
    throw ShapeError("aggregate_clip: quality MLP must map d+1 -> 1");
  }
}

}  // namespace detail

/// Quality-weighted pooling of frame embeddings against a reference aerial embedding.
inline AggregationResult aggregate_clip(std::span<const Embedding> frames, const Embedding& aerial,
                                        const QualityMlpParams& mlp, const AggregationConfig& cfg,
                                        AggregationTape* tape = nullptr) {
  if (!(cfg.beta > 0.0)) {
    throw ConfigError("aggregate_clip: beta must be > 0");
  }
  detail::check_frames(frames, aerial, mlp);
  const std::size_t n = frames.size();
  const auto d = aerial.size();
  AggregationResult r;
  r.cosines.resize(n);
  r.scores.resize(n);
  if (tape != nullptr) {
    tape->mlp.resize(n);
  }
  nn::Vec x(d + 1);
  for (std::size_t i = 0; i < n; ++i) {
    r.cosines[i] = cosine(frames[i], aerial);
    x.head(d) = frames[i];
    x(d) = r.cosines[i];
    r.scores[i] = (tape != nullptr ? mlp.forward(x, tape->mlp[i]) : mlp.forward(x))(0);
  }
  r.weights = softmax(r.scores, cfg.beta);
  nn::Vec pooled = nn::Vec::Zero(d);
  for (std::size_t i = 0; i < n; ++i) {
    pooled += r.weights[i] * frames[i];
  }
  if (tape != nullptr) {
    tape->pooled = pooled;
  }
  r.e_agg = cfg.renormalize_agg ? l2_normalize(pooled) : pooled;
  return r;
}

}  // namespace xvloc
