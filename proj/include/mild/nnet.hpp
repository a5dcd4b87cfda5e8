#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mild/numkit.hpp"

namespace mild::nnet {

using numkit::Index;
using numkit::Matrix;
using numkit::Vector;

inline constexpr double kDefaultLeakySlope = 0.01;

enum class Activation { kLeakyRelu, kLinear };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::kLinear;
};

/// Per-layer values kept by forward() for the backward pass. Rows are batch
/// entries.
struct ForwardCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre_activations;
  Matrix output;
};

struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Matrix input;
};

/// Fully connected feed-forward network operating on row batches.
class DenseNet {
 public:
  DenseNet() = default;
  explicit DenseNet(std::vector<DenseLayer> layers, double leaky_slope = kDefaultLeakySlope);

  /// Layer widths `dims` = {in, h1, ..., out}. Weights and biases are drawn
  /// from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static DenseNet create(std::span<const Index> dims, Activation hidden, Activation output,
                         numkit::Rng& rng, double leaky_slope = kDefaultLeakySlope);

  Index input_dim() const;
  Index output_dim() const;
  std::size_t size() const { return layers_.size(); }
  double leaky_slope() const { return leaky_slope_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  DenseLayer& layer(std::size_t i) { return layers_.at(i); }

  ForwardCache forward(const Matrix& x) const;
  Matrix predict(const Matrix& x) const;
  Gradients backward(const ForwardCache& cache, const Matrix& upstream) const;

  /// Views over every parameter block in the order weight0, bias0, weight1, ...
  std::vector<std::span<double>> parameters();
  std::size_t parameter_count() const;

  bool all_finite() const;

 private:
  std::vector<DenseLayer> layers_;
  double leaky_slope_ = kDefaultLeakySlope;
};

/// Gradient blocks in the same order as DenseNet::parameters().
std::vector<std::span<const double>> gradient_blocks(const Gradients& g);

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  AdamWConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(AdamWConfig cfg) : config(cfg) {}
};

/// One AdamW update: decoupled weight decay followed by the bias-corrected
/// moment step. Moment buffers are sized on first use. Throws
/// DimensionMismatch when block shapes disagree.
void adamw_step(std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads, OptimizerState& state);

}  // namespace mild::nnet
