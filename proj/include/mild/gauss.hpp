#pragma once

#include <span>
#include <vector>

#include "mild/numkit.hpp"

namespace mild::gauss {

using numkit::Index;
using numkit::Matrix;
using numkit::Vector;

/// Partition of a joint space into the observed (first) and predicted (second)
/// index sets. The sets need not be contiguous.
struct BlockSplit {
  std::vector<Index> first;
  std::vector<Index> second;

  /// [0, first_dim) and [first_dim, first_dim + second_dim).
  static BlockSplit contiguous(Index first_dim, Index second_dim);

  Index dim() const { return static_cast<Index>(first.size() + second.size()); }

  /// Throws DimensionMismatch unless the sets are disjoint and cover [0, d).
  void validate(Index d) const;

  bool operator==(const BlockSplit&) const = default;
};

/// Gaussian stored as a mean and the lower Cholesky factor of its covariance.
class MultivariateGaussian {
 public:
  /// Entries above the diagonal of `chol` are ignored. Throws
  /// NotPositiveDefinite unless every diagonal entry is finite and > 0.
  MultivariateGaussian(Vector mean, const Matrix& chol);

  static MultivariateGaussian from_covariance(Vector mean, const Matrix& covariance);
  static MultivariateGaussian standard(Index dim);

  Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Matrix& chol() const { return chol_; }
  Matrix covariance() const;

 private:
  Vector mean_;
  Matrix chol_;
};

double logpdf(const MultivariateGaussian& g, const Vector& x);

/// Log-density of every row of `xs`.
Vector logpdf_rows(const MultivariateGaussian& g, const Matrix& xs);

MultivariateGaussian marginal(const MultivariateGaussian& g, std::span<const Index> dims);

/// Precomputed pieces of the conditional p(second | first = x):
///   mean(x) = second_mean + gain * (x - first_mean)
///   cov     = S22 - S21 * inv(S11) * S12   (independent of x)
struct ConditionalMap {
  Vector first_mean;
  Vector second_mean;
  Matrix gain;
  Matrix conditional_chol;

  Vector mean_at(const Vector& observed) const;
};

/// Throws SingularBlock if the observed block is not positive definite.
ConditionalMap conditional_map(const MultivariateGaussian& g, const BlockSplit& split);

MultivariateGaussian condition(const MultivariateGaussian& g, const BlockSplit& split,
                               const Vector& observed);

/// Closed-form KL(q || p) between full-covariance Gaussians.
double kl_divergence(const MultivariateGaussian& q, const MultivariateGaussian& p);

}  // namespace mild::gauss
