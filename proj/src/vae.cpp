#include "mild/vae.hpp"

#include <cmath>
#include <string>

#include "mild/errors.hpp"

namespace mild::vae {

namespace {

inline Index packed_index(Index i, Index j) { return i * (i + 1) / 2 + j; }

int copy_matching(nnet::DenseNet& to, const nnet::DenseNet& from) {
  int copied = 0;
  const std::size_t n = std::min(to.size(), from.size());
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = to.layer(i);
    const auto& src = from.layers()[i];
    if (dst.weight.rows() == src.weight.rows() && dst.weight.cols() == src.weight.cols()) {
      dst.weight = src.weight;
      dst.bias = src.bias;
      ++copied;
    }
  }
  return copied;
}

}  // namespace

Matrix assemble_chol(const Vector& packed, Index latent_dim) {
  if (packed.size() != triangle_size(latent_dim)) {
    throw DimensionMismatch("assemble_chol: expected " + std::to_string(triangle_size(latent_dim)) +
                            " packed entries");
  }
  Matrix l = Matrix::Zero(latent_dim, latent_dim);
  for (Index i = 0; i < latent_dim; ++i) {
    for (Index j = 0; j < i; ++j) l(i, j) = packed(packed_index(i, j));
    l(i, i) = 2.0 * std::abs(packed(packed_index(i, i))) + kCholDiagFloor;
  }
  return l;
}

Matrix sample_posterior(const Vector& mean, const Matrix& chol, Index n, numkit::Rng& rng) {
  if (n < 1) throw Error("sample_posterior: need at least one sample");
  if (chol.rows() != mean.size() || chol.cols() != mean.size()) {
    throw DimensionMismatch("sample_posterior: factor does not match mean");
  }
  const Index d = mean.size();
  Matrix out(n, d);
  for (Index s = 0; s < n; ++s) {
    const Vector eps = rng.normal_vector(d);
    out.row(s) = (mean + chol.triangularView<Eigen::Lower>() * eps).transpose();
  }
  return out;
}

Matrix sample_posterior(const gauss::MultivariateGaussian& posterior, Index n, numkit::Rng& rng) {
  return sample_posterior(posterior.mean(), posterior.chol(), n, rng);
}

VaeAgent::VaeAgent(nnet::DenseNet trunk, nnet::DenseNet mean_head, nnet::DenseNet chol_head,
                   nnet::DenseNet decoder)
    : trunk_(std::move(trunk)),
      mean_head_(std::move(mean_head)),
      chol_head_(std::move(chol_head)),
      decoder_(std::move(decoder)) {
  const Index hidden = trunk_.output_dim();
  const Index latent = mean_head_.output_dim();
  if (mean_head_.input_dim() != hidden || chol_head_.input_dim() != hidden) {
    throw DimensionMismatch("VaeAgent: heads do not match the encoder trunk");
  }
  if (chol_head_.output_dim() != triangle_size(latent)) {
    throw DimensionMismatch("VaeAgent: Cholesky head must emit latent*(latent+1)/2 values");
  }
  if (decoder_.input_dim() != latent || decoder_.output_dim() != trunk_.input_dim()) {
    throw DimensionMismatch("VaeAgent: decoder shape does not mirror the encoder");
  }
}

VaeAgent VaeAgent::create(const VaeConfig& config, numkit::Rng& rng) {
  if (config.input_dim < 1 || config.latent_dim < 1 || config.hidden.empty()) {
    throw DimensionMismatch("VaeAgent::create: invalid configuration");
  }
  using nnet::Activation;
  std::vector<Index> trunk_dims{config.input_dim};
  trunk_dims.insert(trunk_dims.end(), config.hidden.begin(), config.hidden.end());
  const Index last_hidden = config.hidden.back();
  const std::vector<Index> mean_dims{last_hidden, config.latent_dim};
  const std::vector<Index> chol_dims{last_hidden, triangle_size(config.latent_dim)};
  std::vector<Index> dec_dims{config.latent_dim};
  dec_dims.insert(dec_dims.end(), config.hidden.rbegin(), config.hidden.rend());
  dec_dims.push_back(config.input_dim);

  auto trunk = nnet::DenseNet::create(trunk_dims, Activation::kLeakyRelu, Activation::kLeakyRelu,
                                      rng, config.leaky_slope);
  auto mean_head = nnet::DenseNet::create(mean_dims, Activation::kLinear, Activation::kLinear, rng,
                                          config.leaky_slope);
  auto chol_head = nnet::DenseNet::create(chol_dims, Activation::kLinear, Activation::kLinear, rng,
                                          config.leaky_slope);
  auto decoder = nnet::DenseNet::create(dec_dims, Activation::kLeakyRelu, Activation::kLinear, rng,
                                        config.leaky_slope);
  return VaeAgent(std::move(trunk), std::move(mean_head), std::move(chol_head), std::move(decoder));
}

std::vector<gauss::MultivariateGaussian> VaeAgent::encode(const Matrix& x) const {
  const Matrix h = trunk_.predict(x);
  const Matrix mu = mean_head_.predict(h);
  const Matrix tri = chol_head_.predict(h);
  std::vector<gauss::MultivariateGaussian> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (Index b = 0; b < x.rows(); ++b) {
    out.emplace_back(mu.row(b).transpose(), assemble_chol(tri.row(b).transpose(), latent_dim()));
  }
  return out;
}

Matrix VaeAgent::encode_mean(const Matrix& x) const {
  return mean_head_.predict(trunk_.predict(x));
}

Matrix VaeAgent::decode(const Matrix& z) const { return decoder_.predict(z); }

ElboResult VaeAgent::elbo_loss(const Matrix& x, std::span<const gauss::MultivariateGaussian> priors,
                               Index n_samples, double kl_scale, numkit::Rng& rng) const {
  const Index batch = x.rows();
  const Index latent = latent_dim();
  if (batch == 0) throw EmptySequence("elbo_loss: empty batch");
  if (n_samples < 1) throw Error("elbo_loss: need at least one posterior sample");
  if (priors.size() != 1 && priors.size() != static_cast<std::size_t>(batch)) {
    throw DimensionMismatch("elbo_loss: need one prior per batch row or a single shared prior");
  }
  for (const auto& p : priors) {
    if (p.dim() != latent) throw DimensionMismatch("elbo_loss: prior dimension mismatch");
  }

  const auto trunk_cache = trunk_.forward(x);
  const auto mean_cache = mean_head_.forward(trunk_cache.output);
  const auto chol_cache = chol_head_.forward(trunk_cache.output);
  const Matrix& mu = mean_cache.output;
  const Matrix& tri = chol_cache.output;

  std::vector<Matrix> chols(static_cast<std::size_t>(batch));
  Matrix eps(batch * n_samples, latent);
  Matrix z(batch * n_samples, latent);
  for (Index b = 0; b < batch; ++b) {
    chols[static_cast<std::size_t>(b)] = assemble_chol(tri.row(b).transpose(), latent);
    const auto& l = chols[static_cast<std::size_t>(b)];
    for (Index s = 0; s < n_samples; ++s) {
      const Index r = b * n_samples + s;
      eps.row(r) = rng.normal_vector(latent).transpose();
      z.row(r) = mu.row(b) + eps.row(r) * l.transpose();
    }
  }

  const auto dec_cache = decoder_.forward(z);
  Matrix diff = dec_cache.output;
  for (Index b = 0; b < batch; ++b) {
    diff.middleRows(b * n_samples, n_samples).rowwise() -= x.row(b);
  }

  ElboResult result;
  const double inv_batch = 1.0 / static_cast<double>(batch);
  const double inv_samples = 1.0 / static_cast<double>(n_samples);
  result.reconstruction = diff.squaredNorm() * inv_samples * inv_batch;

  const Matrix d_out = (2.0 * inv_samples * inv_batch) * diff;
  result.gradients.decoder = decoder_.backward(dec_cache, d_out);
  const Matrix& dz = result.gradients.decoder.input;

  Matrix d_mu(batch, latent);
  Matrix d_tri(batch, triangle_size(latent));
  double kl_total = 0.0;
  const double kl_weight = kl_scale * inv_batch;
  for (Index b = 0; b < batch; ++b) {
    const auto& prior = priors.size() == 1 ? priors.front() : priors[static_cast<std::size_t>(b)];
    const auto& l = chols[static_cast<std::size_t>(b)];
    const Vector mean_b = mu.row(b).transpose();
    const gauss::MultivariateGaussian q(mean_b, l);
    kl_total += gauss::kl_divergence(q, prior);

    const auto dz_b = dz.middleRows(b * n_samples, n_samples);
    const auto eps_b = eps.middleRows(b * n_samples, n_samples);

    // d KL / d mu = S_p^{-1} (mu - m); d KL / d L = S_p^{-1} L - L^{-T}.
    const Matrix& pc = prior.chol();
    const Vector prec_delta = numkit::solve_lower_transposed(
        pc, numkit::solve_lower(pc, Vector(mean_b - prior.mean())));
    const Matrix prec_l = numkit::solve_lower_transposed(pc, numkit::solve_lower(pc, l));

    d_mu.row(b) = dz_b.colwise().sum() + kl_weight * prec_delta.transpose();
    const Matrix d_l = dz_b.transpose() * eps_b;
    for (Index i = 0; i < latent; ++i) {
      for (Index j = 0; j < i; ++j) {
        d_tri(b, packed_index(i, j)) = d_l(i, j) + kl_weight * prec_l(i, j);
      }
      const double g_diag = d_l(i, i) + kl_weight * (prec_l(i, i) - 1.0 / l(i, i));
      const double raw = tri(b, packed_index(i, i));
      const double sign = raw > 0.0 ? 1.0 : (raw < 0.0 ? -1.0 : 0.0);
      d_tri(b, packed_index(i, i)) = g_diag * 2.0 * sign;
    }
  }
  result.kl = kl_total * inv_batch;
  result.loss = result.reconstruction + kl_scale * result.kl;

  result.gradients.mean_head = mean_head_.backward(mean_cache, d_mu);
  result.gradients.chol_head = chol_head_.backward(chol_cache, d_tri);
  const Matrix d_hidden = result.gradients.mean_head.input + result.gradients.chol_head.input;
  result.gradients.trunk = trunk_.backward(trunk_cache, d_hidden);
  return result;
}

std::vector<std::span<double>> VaeAgent::parameters() {
  std::vector<std::span<double>> out;
  for (auto* net : {&trunk_, &mean_head_, &chol_head_, &decoder_}) {
    auto p = net->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::size_t VaeAgent::parameter_count() const {
  return trunk_.parameter_count() + mean_head_.parameter_count() + chol_head_.parameter_count() +
         decoder_.parameter_count();
}

bool VaeAgent::all_finite() const {
  return trunk_.all_finite() && mean_head_.all_finite() && chol_head_.all_finite() &&
         decoder_.all_finite();
}

int VaeAgent::transfer_matching_layers(const VaeAgent& source) {
  return copy_matching(trunk_, source.trunk_) + copy_matching(mean_head_, source.mean_head_) +
         copy_matching(chol_head_, source.chol_head_) + copy_matching(decoder_, source.decoder_);
}

std::vector<std::span<const double>> gradient_blocks(const VaeGradients& g) {
  std::vector<std::span<const double>> out;
  for (const auto* part : {&g.trunk, &g.mean_head, &g.chol_head, &g.decoder}) {
    auto b = nnet::gradient_blocks(*part);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

}  // namespace mild::vae
