#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "xvloc/aggregation.hpp"
#include "xvloc/encoder.hpp"
#include "xvloc/mining.hpp"
#include "xvloc/nn.hpp"

namespace xvloc {

/// Non-finite or divergent loss during optimization.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingConfig {
  double alpha{0.2};
  double lambda_sim{0.1};
  double lambda_h{0.1};
  double lr{1e-3};
  double grad_clip_norm{1.0};
  double plateau_factor{0.5};
  int plateau_patience{3};
  int max_epochs_stage1{40};
  int max_epochs_stage2{30};
  int batch_size{32};
  bool average_negatives{true};  // false: sum the hinge over negatives
  double val_fraction{0.2};      // contiguous tail of each trajectory
  double anchor_spacing{3.0};    // meters between anchors
  double stage2_corrupt_prob{0.0};
  double stage2_corrupt_sigma{0.5};
  std::uint64_t rng_seed{1};
};

inline void validate(const TrainingConfig& cfg) {
  if (!(cfg.alpha >= 0.0) || !(cfg.lr >= 0.0) || !(cfg.grad_clip_norm > 0.0) || !(cfg.plateau_factor > 0.0) ||
      !(cfg.plateau_factor < 1.0) || cfg.plateau_patience < 1 || cfg.batch_size < 1 || cfg.max_epochs_stage1 < 0 ||
      cfg.max_epochs_stage2 < 0 || !(cfg.val_fraction >= 0.0) || !(cfg.val_fraction < 1.0) ||
      !(cfg.anchor_spacing > 0.0) || cfg.stage2_corrupt_prob < 0.0 || cfg.stage2_corrupt_prob > 1.0) {
    throw ConfigError("TrainingConfig: value out of range");
  }
}

// ---------------------------------------------------------------------------
// Losses and their gradients

struct TripletLossGrad {
  double loss{0.0};
  nn::Vec d_anchor;
  nn::Vec d_positive;
  std::vector<nn::Vec> d_negatives;
};

/// Hinge triplet loss over several negatives, averaged (or summed) over them.
/// The hinge subgradient at the kink is 0.
inline TripletLossGrad triplet_loss_grad(const nn::Vec& a, const nn::Vec& p, std::span<const nn::Vec> negs,
                                         double alpha, bool average = true) {
  if (negs.empty()) {
    throw ConfigError("triplet_loss: no negatives");
  }
  if (a.size() != p.size()) {
    throw ShapeError("triplet_loss: dimension mismatch");
  }
  const double scale = average ? 1.0 / static_cast<double>(negs.size()) : 1.0;
  TripletLossGrad g;
  g.d_anchor = nn::Vec::Zero(a.size());
  g.d_positive = nn::Vec::Zero(a.size());
  const double dpos = (a - p).squaredNorm();
  for (const auto& n : negs) {
    if (n.size() != a.size()) {
      throw ShapeError("triplet_loss: dimension mismatch");
    }
    const double margin = dpos - (a - n).squaredNorm() + alpha;
    if (margin > 0.0) {
      g.loss += scale * margin;
      g.d_anchor += scale * 2.0 * (n - p);
      g.d_positive += scale * -2.0 * (a - p);
      g.d_negatives.push_back(scale * 2.0 * (a - n));
    } else {
      g.d_negatives.push_back(nn::Vec::Zero(a.size()));
    }
  }
  return g;
}

inline double triplet_loss(const nn::Vec& a, const nn::Vec& p, std::span<const nn::Vec> negs, double alpha,
                           bool average = true) {
  return triplet_loss_grad(a, p, negs, alpha, average).loss;
}

/// Gradient of cos(e, a) with respect to e.
inline nn::Vec cosine_grad(const nn::Vec& e, const nn::Vec& a) {
  const double ne = e.norm();
  const double na = a.norm();
  const double c = e.dot(a) / (ne * na);
  return a / (ne * na) - c * e / (ne * ne);
}

/// Backpropagates through y = v / ||v||.
inline nn::Vec normalize_backward(const nn::Vec& v, const nn::Vec& d_y) {
  const double n = v.norm();
  const nn::Vec y = v / n;
  return (d_y - y * y.dot(d_y)) / n;
}

/// Stage-1 training example in frozen-feature space.
struct Stage1Sample {
  nn::Vec anchor;                  // ground frame
  nn::Vec positive;                // aerial
  std::vector<nn::Vec> negatives;  // aerial
};

/// Mean stage-1 triplet loss over the samples; writes the flat gradient (same
/// layout as EncoderParams::flat()) when `grad` is non-null.
inline double stage1_loss_and_grad(const EncoderParams& enc, std::span<const Stage1Sample> batch,
                                   const TrainingConfig& cfg, nn::Vec* grad) {
  if (batch.empty()) {
    throw ConfigError("stage1_loss: empty batch");
  }
  const nn::Mlp& g_net = enc.alignment(Branch::ground);
  const nn::Mlp& a_net = enc.alignment(Branch::aerial);
  const bool separate = enc.config().branch_mode == BranchMode::separate;
  nn::Mlp g_grad = g_net.zeros_like();
  nn::Mlp a_grad = a_net.zeros_like();
  nn::Mlp& a_sink = separate ? a_grad : g_grad;
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  nn::Mlp::Tape ta;
  nn::Mlp::Tape tp;
  std::vector<nn::Mlp::Tape> tn;
  for (const auto& s : batch) {
    const nn::Vec va = g_net.forward(s.anchor, ta);
    const nn::Vec vp = a_net.forward(s.positive, tp);
    tn.resize(s.negatives.size());
    std::vector<nn::Vec> vn;
    std::vector<nn::Vec> en;
    for (std::size_t k = 0; k < s.negatives.size(); ++k) {
      vn.push_back(a_net.forward(s.negatives[k], tn[k]));
      en.push_back(l2_normalize(vn.back()));
    }
    const TripletLossGrad lg =
        triplet_loss_grad(l2_normalize(va), l2_normalize(vp), en, cfg.alpha, cfg.average_negatives);
    if (!std::isfinite(lg.loss)) {
      throw TrainingError("stage 1: non-finite loss in batch");
    }
    total += inv * lg.loss;
    if (grad != nullptr && lg.loss > 0.0) {
      g_net.backward(ta, inv * normalize_backward(va, lg.d_anchor), g_grad);
      a_net.backward(tp, inv * normalize_backward(vp, lg.d_positive), a_sink);
      for (std::size_t k = 0; k < vn.size(); ++k) {
        if (lg.d_negatives[k].squaredNorm() > 0.0) {
          a_net.backward(tn[k], inv * normalize_backward(vn[k], lg.d_negatives[k]), a_sink);
        }
      }
    }
  }
  if (grad != nullptr) {
    grad->resize(static_cast<Eigen::Index>(enc.num_trainable()));
    g_grad.write_flat(grad->data());
    if (separate) {
      a_grad.write_flat(grad->data() + g_grad.num_params());
    }
  }
  return total;
}

/// Stage-2 example: frozen-encoder embeddings of the clip frames, the positive
/// aerial embedding (also the aggregation reference), and mined negatives.
struct Stage2Sample {
  std::vector<Embedding> frames;
  Embedding positive;
  std::vector<Embedding> negatives;
};

struct TotalLoss {
  double loss{0.0};
  double triplet{0.0};
  double cosine{0.0};
  double entropy{0.0};
  AggregationResult aggregation;
};

/// L = L_triplet(e_agg) - lambda_sim cos(e_agg, a) - lambda_H H(w). Adds the
/// gradient w.r.t. the quality MLP (scaled by `scale`) into `grad` when given.
inline TotalLoss total_loss_from_embeddings(const Stage2Sample& s, const QualityMlpParams& mlp,
                                            const TrainingConfig& cfg, const AggregationConfig& agg_cfg,
                                            nn::Mlp* grad = nullptr, double scale = 1.0) {
  AggregationTape tape;
  TotalLoss out;
  out.aggregation = aggregate_clip(s.frames, s.positive, mlp, agg_cfg, grad != nullptr ? &tape : nullptr);
  const auto& r = out.aggregation;
  const TripletLossGrad lg = triplet_loss_grad(r.e_agg, s.positive, s.negatives, cfg.alpha, cfg.average_negatives);
  out.triplet = lg.loss;
  out.cosine = cosine(r.e_agg, s.positive);
  out.entropy = weight_entropy(r.weights);
  out.loss = out.triplet - cfg.lambda_sim * out.cosine - cfg.lambda_h * out.entropy;
  if (!std::isfinite(out.loss)) {
    throw TrainingError("stage 2: non-finite loss");
  }
  if (grad == nullptr) {
    return out;
  }
  nn::Vec d_e = lg.d_anchor - cfg.lambda_sim * cosine_grad(r.e_agg, s.positive);
  if (agg_cfg.renormalize_agg) {
    d_e = normalize_backward(tape.pooled, d_e);
  }
  const std::size_t n = s.frames.size();
  std::vector<double> d_w(n);
  double weighted = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = r.weights[i];
    // -lambda_H * dH/dw_i = lambda_H (log w_i + 1); the softmax Jacobian zeroes it when w_i = 0.
    d_w[i] = s.frames[i].dot(d_e) + (w > 0.0 ? cfg.lambda_h * (std::log(w) + 1.0) : 0.0);
    weighted += w * d_w[i];
  }
  nn::Vec d_o(1);
  for (std::size_t i = 0; i < n; ++i) {
    d_o(0) = scale * r.weights[i] * (d_w[i] - weighted) / agg_cfg.beta;
    mlp.backward(tape.mlp[i], d_o, *grad);
  }
  return out;
}

/// Stage-2 composite loss for a rendered triplet (frames, positive, negatives
/// encoded with the frozen encoder).
inline TotalLoss total_loss(const Triplet& t, const EncoderParams& encoder, const QualityMlpParams& mlp,
                            const TrainingConfig& cfg, const AggregationConfig& agg_cfg) {
  Stage2Sample s;
  for (const auto& f : t.anchor.frames) {
    s.frames.push_back(encode(encoder, f, Branch::ground));
  }
  s.positive = encode(encoder, t.positive.patch, Branch::aerial);
  for (const auto& n : t.negatives) {
    s.negatives.push_back(encode(encoder, n.patch, Branch::aerial));
  }
  return total_loss_from_embeddings(s, mlp, cfg, agg_cfg);
}

/// Mean stage-2 loss over the batch; flat MLP gradient into `grad` when non-null.
inline double stage2_loss_and_grad(const QualityMlpParams& mlp, std::span<const Stage2Sample> batch,
                                   const TrainingConfig& cfg, const AggregationConfig& agg_cfg, nn::Vec* grad) {
  if (batch.empty()) {
    throw ConfigError("stage2_loss: empty batch");
  }
  nn::Mlp g = mlp.zeros_like();
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& s : batch) {
    total += inv * total_loss_from_embeddings(s, mlp, cfg, agg_cfg, grad != nullptr ? &g : nullptr, inv).loss;
  }
  if (grad != nullptr) {
    *grad = g.flat();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Optimizer pieces

/// Rescales `grad` in place so its norm is at most max_norm; returns the pre-clip norm.
inline double clip_by_global_norm(nn::Vec& grad, double max_norm) {
  const double n = grad.norm();
  if (n > max_norm) {
    grad *= max_norm / n;
  }
  return n;
}

/// Adaptive moment estimation with bias correction.
class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(nn::Vec::Zero(static_cast<Eigen::Index>(n))),
        v_(nn::Vec::Zero(static_cast<Eigen::Index>(n))) {}

  void step(nn::Vec& params, const nn::Vec& grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

  [[nodiscard]] double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  int t_{0};
  nn::Vec m_;
  nn::Vec v_;
};

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without improvement of the monitored loss.
class ReduceOnPlateau {
 public:
  ReduceOnPlateau(double factor, int patience) : factor_(factor), patience_(patience) {}

  /// Returns the (possibly reduced) learning rate.
  double step(double monitored, double lr) {
    if (improved(monitored)) {
      best_ = monitored;
      bad_epochs_ = 0;
      return lr;
    }
    if (++bad_epochs_ >= patience_) {
      bad_epochs_ = 0;
      return lr * factor_;
    }
    return lr;
  }

  [[nodiscard]] bool improved(double monitored) const {
    return !std::isfinite(best_) || monitored < best_ - 1e-4 * std::abs(best_);
  }

 private:
  double factor_;
  int patience_;
  double best_{std::numeric_limits<double>::infinity()};
  int bad_epochs_{0};
};

struct LossCurveRow {
  int epoch{0};
  double train_loss{0.0};
  double val_loss{0.0};
  double lr{0.0};
};

namespace detail {

/// Shared epoch loop: minibatch Adam with global-norm clipping, plateau
/// schedule on the validation loss, early stopping after 2x patience stale
/// epochs, and the best-validation parameters returned.
struct FitHooks {
  std::function<std::size_t(int epoch)> prepare_epoch;  // returns number of training samples
  std::function<double(const nn::Vec& params, std::span<const std::size_t> idx, nn::Vec* grad)> loss_grad;
  std::function<double(const nn::Vec& params)> val_loss;
};

inline nn::Vec fit(nn::Vec params, int max_epochs, const TrainingConfig& cfg, std::uint64_t seed, const FitHooks& hooks,
                   std::vector<LossCurveRow>& curve) {
  Adam adam(static_cast<std::size_t>(params.size()), cfg.lr);
  ReduceOnPlateau plateau(cfg.plateau_factor, cfg.plateau_patience);
  nn::Vec best = params;
  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;
  Rng rng(seed);
  nn::Vec grad;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    const std::size_t n = hooks.prepare_epoch(epoch);
    if (n == 0) {
      throw TrainingError("epoch " + std::to_string(epoch) + ": no training samples");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), std::mt19937_64(rng.next()));
    double train_total = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const double loss = hooks.loss_grad(params, idx, &grad);
      if (!std::isfinite(loss) || std::abs(loss) > 1e6 || !grad.allFinite()) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << ", batch starting " << start << " (loss " << loss << ")";
        throw TrainingError(msg.str());
      }
      train_total += loss * static_cast<double>(idx.size());
      clip_by_global_norm(grad, cfg.grad_clip_norm);
      adam.step(params, grad);
    }
    const double val = hooks.val_loss(params);
    curve.push_back({epoch, train_total / static_cast<double>(n), val, adam.lr()});
    if (val < best_val) {
      best_val = val;
      best = params;
    }
    if (plateau.improved(val)) {
      stale = 0;
    } else {
      ++stale;
    }
    adam.set_lr(plateau.step(val, adam.lr()));
    if (stale >= 2 * cfg.plateau_patience) {
      break;
    }
  }
  return best;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training data in frozen-feature space

/// One anchor's rendered candidates pushed through the frozen projection.
struct AnchorFeatures {
  Pose anchor_pose;
  std::vector<nn::Vec> frames;        // ground frames, oldest first
  std::vector<SeasonId> seasons;
  nn::Mat positives;                  // frozen_dim x seasons
  std::vector<Pose> negative_poses;
  std::vector<nn::Mat> negatives;     // [season] frozen_dim x candidates
};

struct TrainingSet {
  std::vector<AnchorFeatures> train;
  std::vector<AnchorFeatures> val;
};

inline nn::Mat frozen_features_batch(const EncoderParams& enc, std::span<const ImagePatch> patches) {
  const int pixels = enc.config().input_rows * enc.config().input_cols;
  nn::Mat x(pixels, static_cast<Eigen::Index>(patches.size()));
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (patches[i].rows != enc.config().input_rows || patches[i].cols != enc.config().input_cols) {
      throw ShapeError("frozen_features_batch: patch resolution mismatch");
    }
    x.col(static_cast<Eigen::Index>(i)) = EncoderParams::standardized(patches[i]);
  }
  return enc.frozen_projection() * x;
}

inline AnchorFeatures to_features(const AnchorPool& pool, const EncoderParams& enc) {
  AnchorFeatures f;
  f.anchor_pose = pool.anchor_pose;
  const nn::Mat frames = frozen_features_batch(enc, pool.anchor.frames);
  for (Eigen::Index c = 0; c < frames.cols(); ++c) {
    f.frames.push_back(frames.col(c));
  }
  f.seasons = pool.seasons;
  f.positives = frozen_features_batch(enc, pool.positive_candidates);
  f.negative_poses = pool.negative_poses;
  for (const auto& per_season : pool.negative_patches) {
    f.negatives.push_back(frozen_features_batch(enc, per_season));
  }
  return f;
}

/// Adds heavy pixel noise to one random clip frame (not the latest) and
/// returns its index; single-frame clips are left alone.
inline std::optional<std::size_t> corrupt_random_frame(GroundClip& clip, double sigma, Rng& rng) {
  if (clip.frames.size() < 2) {
    return std::nullopt;
  }
  const std::size_t k = rng.index(clip.frames.size() - 1);
  for (double& px : clip.frames[k].pixels) {
    px = std::clamp(px + rng.normal(0.0, sigma), 0.0, 1.0);
  }
  return k;
}

/// Anchors every `anchor_spacing` meters along each trajectory; the last
/// `val_fraction` of each drive is held out for validation.
inline TrainingSet build_training_set(const WorldModel& world, std::span<const Trajectory> trajectories,
                                      const EncoderParams& enc, const TripletSourceConfig& src,
                                      const MiningConfig& mining, const TrainingConfig& cfg) {
  validate(cfg);
  validate(mining);
  TrainingSet set;
  for (std::size_t ti = 0; ti < trajectories.size(); ++ti) {
    const Trajectory& traj = trajectories[ti];
    const auto usable = anchor_candidates(world, traj, src);
    if (usable.empty()) {
      continue;
    }
    std::vector<std::size_t> anchors;
    double next = -1.0;
    double cum = 0.0;
    std::size_t prev = 0;
    for (std::size_t i : usable) {
      for (std::size_t k = prev + 1; k <= i; ++k) {
        cum += distance(traj[k - 1].pose, traj[k].pose);
      }
      prev = i;
      if (cum >= next) {
        anchors.push_back(i);
        next = cum + cfg.anchor_spacing;
      }
    }
    const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(anchors.size())));
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      const std::uint64_t seed = derive_seed(cfg.rng_seed, 0xA11u, ti, a);
      auto pool = sample_anchor_pool(world, traj, anchors[a], src, mining, seed);
      if (!pool) {
        log_warning("build_training_set: anchor without negatives dropped");
        continue;
      }
      if (src.clip && cfg.stage2_corrupt_prob > 0.0) {
        Rng rng(derive_seed(seed, 0xC0u));
        if (rng.uniform() < cfg.stage2_corrupt_prob) {
          corrupt_random_frame(pool->anchor, cfg.stage2_corrupt_sigma, rng);
        }
      }
      (a + n_val >= anchors.size() ? set.val : set.train).push_back(to_features(*pool, enc));
    }
  }
  if (set.train.empty()) {
    throw ConfigError("build_training_set: no training anchors");
  }
  if (set.val.empty()) {
    set.val = set.train;
  }
  return set;
}

/// Hard-positive and hard-negative choice for one anchor under the current encoder.
struct MinedIndices {
  std::size_t anchor{0};
  std::size_t positive_season{0};
  std::vector<std::size_t> negatives;
};

inline std::optional<MinedIndices> mine_features(const AnchorFeatures& f, std::size_t anchor_index,
                                                 const EncoderParams& enc, const MiningConfig& mining) {
  const Embedding a = encode_features(enc, f.frames.back(), Branch::ground);
  const nn::Mat pos = encode_features_batch(enc, f.positives, Branch::aerial);
  std::vector<PositiveCandidate> cands;
  for (Eigen::Index s = 0; s < pos.cols(); ++s) {
    cands.push_back({pos.col(s), f.seasons[static_cast<std::size_t>(s)]});
  }
  const std::size_t ps = select_hard_positive(a, cands);
  const nn::Mat neg = encode_features_batch(enc, f.negatives[ps], Branch::aerial);
  std::vector<PoolEntry> pool;
  for (Eigen::Index c = 0; c < neg.cols(); ++c) {
    pool.push_back({neg.col(c), f.negative_poses[static_cast<std::size_t>(c)]});
  }
  auto negs = select_hard_negatives(a, f.anchor_pose, pool, f.seasons[ps], mining);
  if (negs.empty()) {
    return std::nullopt;
  }
  return MinedIndices{anchor_index, ps, std::move(negs)};
}

inline std::vector<MinedIndices> mine_all(std::span<const AnchorFeatures> set, const EncoderParams& enc,
                                          const MiningConfig& mining) {
  std::vector<MinedIndices> out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (auto m = mine_features(set[i], i, enc, mining)) {
      out.push_back(std::move(*m));
    }
  }
  return out;
}

inline Stage1Sample stage1_sample(const AnchorFeatures& f, const MinedIndices& m) {
  Stage1Sample s;
  s.anchor = f.frames.back();
  s.positive = f.positives.col(static_cast<Eigen::Index>(m.positive_season));
  for (std::size_t k : m.negatives) {
    s.negatives.push_back(f.negatives[m.positive_season].col(static_cast<Eigen::Index>(k)));
  }
  return s;
}

struct Stage1Result {
  EncoderParams encoder;
  std::vector<LossCurveRow> curve;
};

/// Stage 1: trains the alignment layers with single-frame anchors, re-mining
/// hard positives and negatives with the current encoder every epoch.
inline Stage1Result train_stage1(const TrainingSet& data, EncoderParams encoder, const TrainingConfig& cfg,
                                 const MiningConfig& mining) {
  validate(cfg);
  std::vector<Stage1Sample> samples;
  EncoderParams work = encoder;
  detail::FitHooks hooks;
  hooks.prepare_epoch = [&](int) {
    samples.clear();
    for (const auto& m : mine_all(data.train, work, mining)) {
      samples.push_back(stage1_sample(data.train[m.anchor], m));
    }
    return samples.size();
  };
  hooks.loss_grad = [&](const nn::Vec& params, std::span<const std::size_t> idx, nn::Vec* grad) {
    work.set_flat(params);
    std::vector<Stage1Sample> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) {
      batch.push_back(samples[i]);
    }
    return stage1_loss_and_grad(work, batch, cfg, grad);
  };
  hooks.val_loss = [&](const nn::Vec& params) {
    work.set_flat(params);
    std::vector<Stage1Sample> val;
    for (const auto& m : mine_all(data.val, work, mining)) {
      val.push_back(stage1_sample(data.val[m.anchor], m));
    }
    return val.empty() ? 0.0 : stage1_loss_and_grad(work, val, cfg, nullptr);
  };
  Stage1Result result{encoder, {}};
  const nn::Vec best =
      detail::fit(encoder.flat(), cfg.max_epochs_stage1, cfg, derive_seed(cfg.rng_seed, 0x5731u), hooks, result.curve);
  result.encoder.set_flat(best);
  return result;
}

/// Stage-2 samples with the frozen encoder; mining uses the latest frame as anchor.
inline std::vector<Stage2Sample> stage2_samples(std::span<const AnchorFeatures> set, const EncoderParams& enc,
                                                const MiningConfig& mining) {
  std::vector<Stage2Sample> out;
  for (const auto& m : mine_all(set, enc, mining)) {
    const auto& f = set[m.anchor];
    Stage2Sample s;
    for (const auto& fr : f.frames) {
      s.frames.push_back(encode_features(enc, fr, Branch::ground));
    }
    s.positive = encode_features(enc, f.positives.col(static_cast<Eigen::Index>(m.positive_season)), Branch::aerial);
    for (std::size_t k : m.negatives) {
      s.negatives.push_back(
          encode_features(enc, f.negatives[m.positive_season].col(static_cast<Eigen::Index>(k)), Branch::aerial));
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct Stage2Result {
  QualityMlpParams mlp;
  std::vector<LossCurveRow> curve;
};

/// Stage 2: encoder frozen, trains the quality MLP on clips with the composite loss.
inline Stage2Result train_stage2(const TrainingSet& data, const EncoderParams& encoder, QualityMlpParams mlp,
                                 const TrainingConfig& cfg, const AggregationConfig& agg_cfg,
                                 const MiningConfig& mining) {
  validate(cfg);
  const auto train = stage2_samples(data.train, encoder, mining);
  const auto val = stage2_samples(data.val, encoder, mining);
  if (train.empty()) {
    throw TrainingError("stage 2: no training samples");
  }
  QualityMlpParams work = mlp;
  detail::FitHooks hooks;
  hooks.prepare_epoch = [&](int) { return train.size(); };
  hooks.loss_grad = [&](const nn::Vec& params, std::span<const std::size_t> idx, nn::Vec* grad) {
    work.read_flat(params.data());
    std::vector<Stage2Sample> batch;
    for (std::size_t i : idx) {
      batch.push_back(train[i]);
    }
    return stage2_loss_and_grad(work, batch, cfg, agg_cfg, grad);
  };
  hooks.val_loss = [&](const nn::Vec& params) {
    work.read_flat(params.data());
    return stage2_loss_and_grad(work, val.empty() ? std::span(train) : std::span(val), cfg, agg_cfg, nullptr);
  };
  Stage2Result result{mlp, {}};
  const nn::Vec best =
      detail::fit(mlp.flat(), cfg.max_epochs_stage2, cfg, derive_seed(cfg.rng_seed, 0x5732u), hooks, result.curve);
  result.mlp.read_flat(best.data());
  return result;
}

}  // namespace xvloc
