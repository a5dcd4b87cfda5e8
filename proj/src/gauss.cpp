#include "mild/gauss.hpp"

#include <cmath>
#include <string>

#include "mild/errors.hpp"

namespace mild::gauss {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

Matrix select(const Matrix& m, std::span<const Index> rows, std::span<const Index> cols) {
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = m(rows[i], cols[j]);
  }
  return out;
}

Vector select(const Vector& v, std::span<const Index> idx) {
  Vector out(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(i) = v(idx[i]);
  return out;
}

void require_dim(Index got, Index want, const char* what) {
  if (got != want) {
    throw DimensionMismatch(std::string(what) + ": dimension " + std::to_string(got) +
                            ", expected " + std::to_string(want));
  }
}

}  // namespace

BlockSplit BlockSplit::contiguous(Index first_dim, Index second_dim) {
  BlockSplit s;
  for (Index i = 0; i < first_dim; ++i) s.first.push_back(i);
  for (Index i = 0; i < second_dim; ++i) s.second.push_back(first_dim + i);
  return s;
}

void BlockSplit::validate(Index d) const {
  if (dim() != d) {
    throw DimensionMismatch("BlockSplit covers " + std::to_string(dim()) + " dims, expected " +
                            std::to_string(d));
  }
  std::vector<bool> seen(static_cast<std::size_t>(d), false);
  for (const auto* set : {&first, &second}) {
    for (Index i : *set) {
      if (i < 0 || i >= d || seen[static_cast<std::size_t>(i)]) {
        throw DimensionMismatch("BlockSplit index sets must be disjoint and cover [0, d)");
      }
      seen[static_cast<std::size_t>(i)] = true;
    }
  }
}

MultivariateGaussian::MultivariateGaussian(Vector mean, const Matrix& chol)
    : mean_(std::move(mean)), chol_(chol.triangularView<Eigen::Lower>()) {
  if (chol_.rows() != chol_.cols() || chol_.rows() != mean_.size()) {
    throw DimensionMismatch("MultivariateGaussian: mean has " + std::to_string(mean_.size()) +
                            " entries but factor is " + std::to_string(chol_.rows()) + "x" +
                            std::to_string(chol_.cols()));
  }
  if (!mean_.allFinite() || !chol_.allFinite()) {
    throw NotPositiveDefinite("MultivariateGaussian: non-finite parameters");
  }
  for (Index i = 0; i < chol_.rows(); ++i) {
    if (!(chol_(i, i) > 0.0)) {
      throw NotPositiveDefinite("MultivariateGaussian: Cholesky diagonal must be positive");
    }
  }
}

MultivariateGaussian MultivariateGaussian::from_covariance(Vector mean, const Matrix& covariance) {
  return {std::move(mean), numkit::cholesky(covariance)};
}

MultivariateGaussian MultivariateGaussian::standard(Index dim) {
  return {Vector::Zero(dim), Matrix::Identity(dim, dim)};
}

Matrix MultivariateGaussian::covariance() const {
  Matrix c = chol_ * chol_.transpose();
  // Exact symmetry.
  return 0.5 * (c + c.transpose());
}

double logpdf(const MultivariateGaussian& g, const Vector& x) {
  require_dim(x.size(), g.dim(), "logpdf");
  const Vector w = numkit::solve_lower(g.chol(), Vector(x - g.mean()));
  return -0.5 * (static_cast<double>(g.dim()) * kLogTwoPi + w.squaredNorm()) -
         numkit::log_diag_sum(g.chol());
}

Vector logpdf_rows(const MultivariateGaussian& g, const Matrix& xs) {
  require_dim(xs.cols(), g.dim(), "logpdf_rows");
  // Solve L W^T = (X - mu)^T for all rows at once.
  Matrix centered = (xs.rowwise() - g.mean().transpose()).transpose();
  const Matrix w = numkit::solve_lower(g.chol(), centered);
  const double c =
      -0.5 * static_cast<double>(g.dim()) * kLogTwoPi - numkit::log_diag_sum(g.chol());
  Vector out = -0.5 * w.colwise().squaredNorm().transpose();
  out.array() += c;
  return out;
}

MultivariateGaussian marginal(const MultivariateGaussian& g, std::span<const Index> dims) {
  for (Index i : dims) {
    if (i < 0 || i >= g.dim()) throw DimensionMismatch("marginal: index out of range");
  }
  const Matrix cov = g.covariance();
  return MultivariateGaussian::from_covariance(select(g.mean(), dims), select(cov, dims, dims));
}

Vector ConditionalMap::mean_at(const Vector& observed) const {
  require_dim(observed.size(), first_mean.size(), "condition");
  return second_mean + gain * (observed - first_mean);
}

ConditionalMap conditional_map(const MultivariateGaussian& g, const BlockSplit& split) {
  split.validate(g.dim());
  const Matrix cov = g.covariance();
  const Matrix s11 = select(cov, split.first, split.first);
  const Matrix s12 = select(cov, split.first, split.second);
  const Matrix s22 = select(cov, split.second, split.second);

  Matrix l11;
  try {
    l11 = numkit::cholesky(s11);
  } catch (const NotPositiveDefinite& e) {
    throw SingularBlock(std::string("condition: observed block is not positive definite: ") +
                        e.what());
  }

  // V = L11^{-1} S12, so S21 S11^{-1} S12 = V^T V and gain = (L11^{-T} V)^T.
  const Matrix v = numkit::solve_lower(l11, s12);
  const Matrix gain_t = numkit::solve_lower_transposed(l11, v);
  Matrix cond_cov = s22 - v.transpose() * v;
  cond_cov = 0.5 * (cond_cov + cond_cov.transpose()).eval();

  ConditionalMap map;
  map.first_mean = select(g.mean(), split.first);
  map.second_mean = select(g.mean(), split.second);
  map.gain = gain_t.transpose();
  map.conditional_chol = numkit::cholesky_repaired(cond_cov);
  return map;
}

MultivariateGaussian condition(const MultivariateGaussian& g, const BlockSplit& split,
                               const Vector& observed) {
  const ConditionalMap map = conditional_map(g, split);
  return {map.mean_at(observed), map.conditional_chol};
}

double kl_divergence(const MultivariateGaussian& q, const MultivariateGaussian& p) {
  require_dim(q.dim(), p.dim(), "kl_divergence");
  const Matrix a = numkit::solve_lower(p.chol(), q.chol());
  const Vector delta = numkit::solve_lower(p.chol(), Vector(p.mean() - q.mean()));
  const double trace = a.squaredNorm();
  const double log_det_ratio = 2.0 * (numkit::log_diag_sum(p.chol()) - numkit::log_diag_sum(q.chol()));
  return 0.5 * (trace - static_cast<double>(q.dim()) + delta.squaredNorm() + log_det_ratio);
}

}  // namespace mild::gauss
