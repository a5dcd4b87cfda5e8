#pragma once

#include <span>
#include <vector>

#include "mild/gauss.hpp"
#include "mild/nnet.hpp"
#include "mild/numkit.hpp"

namespace mild::vae {

using numkit::Index;
using numkit::Matrix;
using numkit::Vector;

/// Added to every posterior Cholesky diagonal after the 2|l| transform.
inline constexpr double kCholDiagFloor = 1e-4;

inline Index triangle_size(Index d) { return d * (d + 1) / 2; }

struct VaeConfig {
  Index input_dim = 0;
  Index latent_dim = 5;
  std::vector<Index> hidden = {250, 150};
  double leaky_slope = nnet::kDefaultLeakySlope;
};

/// Lower-triangular factor from packed row-major entries (0,0), (1,0), (1,1),
/// (2,0), ... Diagonal entries go through l -> 2|l| + kCholDiagFloor.
Matrix assemble_chol(const Vector& packed, Index latent_dim);

/// n rows of mean + chol * eps with eps ~ N(0, I).
Matrix sample_posterior(const Vector& mean, const Matrix& chol, Index n, numkit::Rng& rng);
Matrix sample_posterior(const gauss::MultivariateGaussian& posterior, Index n, numkit::Rng& rng);

struct VaeGradients {
  nnet::Gradients trunk;
  nnet::Gradients mean_head;
  nnet::Gradients chol_head;
  nnet::Gradients decoder;
};

struct ElboResult {
  /// mean over batch of (reconstruction + kl_scale * kl)
  double loss = 0.0;
  /// Squared error summed over input dims, averaged over samples and batch.
  double reconstruction = 0.0;
  /// Unscaled KL averaged over the batch.
  double kl = 0.0;
  VaeGradients gradients;
};

/// Encoder (trunk + mean head + Cholesky head) and decoder for one agent.
class VaeAgent {
 public:
  VaeAgent() = default;
  VaeAgent(nnet::DenseNet trunk, nnet::DenseNet mean_head, nnet::DenseNet chol_head,
           nnet::DenseNet decoder);

  static VaeAgent create(const VaeConfig& config, numkit::Rng& rng);

  Index input_dim() const { return trunk_.input_dim(); }
  Index latent_dim() const { return mean_head_.output_dim(); }

  std::vector<gauss::MultivariateGaussian> encode(const Matrix& x) const;
  /// Posterior means only, one row per input row.
  Matrix encode_mean(const Matrix& x) const;
  Matrix decode(const Matrix& z) const;

  /// `priors` holds one Gaussian per batch row, or a single Gaussian shared
  /// by every row.
  ElboResult elbo_loss(const Matrix& x, std::span<const gauss::MultivariateGaussian> priors,
                       Index n_samples, double kl_scale, numkit::Rng& rng) const;

  /// Parameter blocks of trunk, mean head, Cholesky head and decoder, in order.
  std::vector<std::span<double>> parameters();
  std::size_t parameter_count() const;
  bool all_finite() const;

  const nnet::DenseNet& trunk() const { return trunk_; }
  const nnet::DenseNet& mean_head() const { return mean_head_; }
  const nnet::DenseNet& chol_head() const { return chol_head_; }
  const nnet::DenseNet& decoder() const { return decoder_; }

  /// Copies every layer of `source` whose shape matches the corresponding
  /// layer here. Returns the number of layers copied.
  int transfer_matching_layers(const VaeAgent& source);

 private:
  nnet::DenseNet trunk_;
  nnet::DenseNet mean_head_;
  nnet::DenseNet chol_head_;
  nnet::DenseNet decoder_;
};

/// Gradient blocks in the order of VaeAgent::parameters().
std::vector<std::span<const double>> gradient_blocks(const VaeGradients& g);

}  // namespace mild::vae
