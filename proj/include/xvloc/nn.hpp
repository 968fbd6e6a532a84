#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "xvloc/core.hpp"

namespace xvloc::nn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;    // out
};

/// Fully connected network: affine layers with rectifiers between them, final
/// layer linear. Gradients are an Mlp of the same shape.
class Mlp {
 public:
  /// Per-sample activations recorded by forward() for backward().
  struct Tape {
    std::vector<Vec> inputs;  // input to each layer (post-activation of the previous)
    std::vector<Vec> pre;     // affine output of each layer
  };

  Mlp() = default;

  /// He-initialized network with the given layer widths (dims.front() = input).
  Mlp(const std::vector<int>& dims, Rng& rng) {
    if (dims.size() < 2) {
      throw ConfigError("Mlp: need at least input and output widths");
    }
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      DenseLayer layer{Mat(dims[l + 1], dims[l]), Vec::Zero(dims[l + 1])};
      const bool last = l + 2 == dims.size();
      const double sigma = std::sqrt((last ? 1.0 : 2.0) / dims[l]);
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
        layer.weight.data()[i] = rng.normal(0.0, sigma);
      }
      layers_.push_back(std::move(layer));
    }
  }

  explicit Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { check_shapes(); }

  /// Same shape, all parameters zero.
  [[nodiscard]] Mlp zeros_like() const {
    std::vector<DenseLayer> z;
    for (const auto& l : layers_) {
      z.push_back({Mat::Zero(l.weight.rows(), l.weight.cols()), Vec::Zero(l.bias.size())});
    }
    return Mlp(std::move(z));
  }

  [[nodiscard]] int input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
  [[nodiscard]] int output_dim() const { return static_cast<int>(layers_.back().weight.rows()); }
  [[nodiscard]] std::vector<DenseLayer>& layers() { return layers_; }
  [[nodiscard]] const std::vector<DenseLayer>& layers() const { return layers_; }

  [[nodiscard]] Vec forward(const Vec& x) const {
    Vec h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Vec z = layers_[l].weight * h + layers_[l].bias;
      h = l + 1 < layers_.size() ? Vec(z.cwiseMax(0.0)) : z;
    }
    return h;
  }

  [[nodiscard]] Vec forward(const Vec& x, Tape& tape) const {
    tape.inputs.clear();
    tape.pre.clear();
    Vec h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      tape.inputs.push_back(h);
      Vec z = layers_[l].weight * h + layers_[l].bias;
      tape.pre.push_back(z);
      h = l + 1 < layers_.size() ? Vec(z.cwiseMax(0.0)) : z;
    }
    return h;
  }

  /// Column-batched inference: each column of X is a sample.
  [[nodiscard]] Mat forward_batch(const Mat& x) const {
    Mat h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Mat z = (layers_[l].weight * h).colwise() + layers_[l].bias;
      h = l + 1 < layers_.size() ? Mat(z.cwiseMax(0.0)) : z;
    }
    return h;
  }

  /// Accumulates parameter gradients into `grad`; returns dL/dx.
  /// The rectifier subgradient at 0 is 0.
  Vec backward(const Tape& tape, const Vec& d_out, Mlp& grad) const {
    Vec g = d_out;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      if (k + 1 < layers_.size()) {
        g = g.cwiseProduct((tape.pre[k].array() > 0.0).cast<double>().matrix());
      }
      grad.layers_[k].weight.noalias() += g * tape.inputs[k].transpose();
      grad.layers_[k].bias += g;
      g = layers_[k].weight.transpose() * g;
    }
    return g;
  }

  [[nodiscard]] std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
      n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    }
    return n;
  }

  /// Parameters flattened layer by layer (weight column-major, then bias).
  void write_flat(double* out) const {
    for (const auto& l : layers_) {
      out = std::copy(l.weight.data(), l.weight.data() + l.weight.size(), out);
      out = std::copy(l.bias.data(), l.bias.data() + l.bias.size(), out);
    }
  }

  void read_flat(const double* in) {
    for (auto& l : layers_) {
      std::copy(in, in + l.weight.size(), l.weight.data());
      in += l.weight.size();
      std::copy(in, in + l.bias.size(), l.bias.data());
      in += l.bias.size();
    }
  }

  [[nodiscard]] Vec flat() const {
    Vec v(static_cast<Eigen::Index>(num_params()));
    write_flat(v.data());
    return v;
  }

  [[nodiscard]] bool all_finite() const {
    for (const auto& l : layers_) {
      if (!l.weight.allFinite() || !l.bias.allFinite()) {
        return false;
      }
    }
    return true;
  }

  bool operator==(const Mlp& o) const {
    if (layers_.size() != o.layers_.size()) {
      return false;
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].weight.rows() != o.layers_[i].weight.rows() ||
          layers_[i].weight.cols() != o.layers_[i].weight.cols() || layers_[i].weight != o.layers_[i].weight ||
          layers_[i].bias != o.layers_[i].bias) {
        return false;
      }
    }
    return true;
  }

 private:
  void check_shapes() const {
    if (layers_.empty()) {
      throw ConfigError("Mlp: no layers");
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].weight.rows() != layers_[l].bias.size() ||
          (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows())) {
        throw ShapeError("Mlp: inconsistent layer shapes");
      }
    }
  }

  std::vector<DenseLayer> layers_;
};

inline nlohmann::json to_json(const Mlp& mlp) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : mlp.layers()) {
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", std::vector<double>(l.weight.data(), l.weight.data() + l.weight.size())},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return layers;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  std::vector<DenseLayer> layers;
  for (const auto& jl : j) {
    const auto rows = jl.at("rows").get<Eigen::Index>();
    const auto cols = jl.at("cols").get<Eigen::Index>();
    const auto w = jl.at("weight").get<std::vector<double>>();
    const auto b = jl.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
      throw ShapeError("checkpoint: layer array size does not match its dims header");
    }
    layers.push_back({Eigen::Map<const Mat>(w.data(), rows, cols), Eigen::Map<const Vec>(b.data(), rows)});
  }
  return Mlp(std::move(layers));
}

}  // namespace xvloc::nn
