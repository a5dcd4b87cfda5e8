#include "mild/nnet.hpp"

#include <cmath>
#include <string>

#include "mild/errors.hpp"

namespace mild::nnet {

DenseNet::DenseNet(std::vector<DenseLayer> layers, double leaky_slope)
    : layers_(std::move(layers)), leaky_slope_(leaky_slope) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.size() != l.weight.rows()) {
      throw DimensionMismatch("DenseNet: layer " + std::to_string(i) + " bias/weight mismatch");
    }
    if (i > 0 && l.weight.cols() != layers_[i - 1].weight.rows()) {
      throw DimensionMismatch("DenseNet: layer " + std::to_string(i) +
                              " input does not chain with previous output");
    }
  }
}

DenseNet DenseNet::create(std::span<const Index> dims, Activation hidden, Activation output,
                          numkit::Rng& rng, double leaky_slope) {
  if (dims.size() < 2) throw DimensionMismatch("DenseNet::create needs at least two widths");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const Index in = dims[i];
    const Index out = dims[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer layer;
    layer.weight.resize(out, in);
    layer.bias.resize(out);
    for (Index r = 0; r < out; ++r) {
      for (Index c = 0; c < in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    }
    for (Index r = 0; r < out; ++r) layer.bias(r) = rng.uniform(-bound, bound);
    layer.activation = (i + 2 == dims.size()) ? output : hidden;
    layers.push_back(std::move(layer));
  }
  return DenseNet(std::move(layers), leaky_slope);
}

Index DenseNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().weight.cols(); }
Index DenseNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().weight.rows(); }

ForwardCache DenseNet::forward(const Matrix& x) const {
  if (x.cols() != input_dim()) {
    throw DimensionMismatch("DenseNet::forward: input has " + std::to_string(x.cols()) +
                            " columns, expected " + std::to_string(input_dim()));
  }
  ForwardCache cache;
  cache.inputs.reserve(layers_.size());
  cache.pre_activations.reserve(layers_.size());
  Matrix h = x;
  for (const auto& layer : layers_) {
    Matrix pre = h * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    cache.inputs.push_back(std::move(h));
    if (layer.activation == Activation::kLeakyRelu) {
      const double slope = leaky_slope_;
      h = pre.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    } else {
      h = pre;
    }
    cache.pre_activations.push_back(std::move(pre));
  }
  cache.output = std::move(h);
  return cache;
}

Matrix DenseNet::predict(const Matrix& x) const {
  if (x.cols() != input_dim()) {
    throw DimensionMismatch("DenseNet::predict: input has " + std::to_string(x.cols()) +
                            " columns, expected " + std::to_string(input_dim()));
  }
  Matrix h = x;
  for (const auto& layer : layers_) {
    Matrix pre = h * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    if (layer.activation == Activation::kLeakyRelu) {
      const double slope = leaky_slope_;
      h = pre.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    } else {
      h = std::move(pre);
    }
  }
  return h;
}

Gradients DenseNet::backward(const ForwardCache& cache, const Matrix& upstream) const {
  if (cache.inputs.size() != layers_.size() || upstream.rows() != cache.output.rows() ||
      upstream.cols() != output_dim()) {
    throw DimensionMismatch("DenseNet::backward: cache or upstream gradient shape mismatch");
  }
  Gradients g;
  g.weight.resize(layers_.size());
  g.bias.resize(layers_.size());
  Matrix delta = upstream;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& layer = layers_[k];
    if (layer.activation == Activation::kLeakyRelu) {
      const double slope = leaky_slope_;
      delta.array() *= cache.pre_activations[k].array().unaryExpr(
          [slope](double v) { return v > 0.0 ? 1.0 : slope; });
    }
    g.weight[k] = delta.transpose() * cache.inputs[k];
    g.bias[k] = delta.colwise().sum().transpose();
    delta = delta * layer.weight;
  }
  g.input = std::move(delta);
  return g;
}

std::vector<std::span<double>> DenseNet::parameters() {
  std::vector<std::span<double>> out;
  for (auto& layer : layers_) {
    out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
    out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
  return out;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) {
    n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
  }
  return n;
}

bool DenseNet::all_finite() const {
  for (const auto& layer : layers_) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

std::vector<std::span<const double>> gradient_blocks(const Gradients& g) {
  std::vector<std::span<const double>> out;
  for (std::size_t k = 0; k < g.weight.size(); ++k) {
    out.emplace_back(g.weight[k].data(), static_cast<std::size_t>(g.weight[k].size()));
    out.emplace_back(g.bias[k].data(), static_cast<std::size_t>(g.bias[k].size()));
  }
  return out;
}

void adamw_step(std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads, OptimizerState& state) {
  if (params.size() != grads.size()) {
    throw DimensionMismatch("adamw_step: " + std::to_string(params.size()) +
                            " parameter blocks but " + std::to_string(grads.size()) +
                            " gradient blocks");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionMismatch("adamw_step: optimizer state has a different block count");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size() || params[b].size() != state.first_moment[b].size()) {
      throw DimensionMismatch("adamw_step: block " + std::to_string(b) + " size mismatch");
    }
  }

  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  const double step_size = c.learning_rate / bias1;
  const double sqrt_bias2 = std::sqrt(bias2);
  const double decay = 1.0 - c.learning_rate * c.weight_decay;

  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b];
    auto g = grads[b];
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= decay;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      p[i] -= step_size * m[i] / (std::sqrt(v[i]) / sqrt_bias2 + c.epsilon);
    }
  }
}

}  // namespace mild::nnet
