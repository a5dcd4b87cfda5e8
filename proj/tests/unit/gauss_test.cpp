#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mild/errors.hpp"
#include "mild/gauss.hpp"
#include "support/oracles.hpp"

using mild::gauss::BlockSplit;
using mild::gauss::MultivariateGaussian;
using mild::numkit::Index;
using mild::numkit::Matrix;
using mild::numkit::Rng;
using mild::numkit::Vector;
namespace g = mild::gauss;

namespace {

MultivariateGaussian random_gaussian(Index d, Rng& rng) {
  return MultivariateGaussian::from_covariance(rng.normal_vector(d), oracle::random_spd(d, rng));
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Logpdf, StandardNormalClosedForms) {
  const double log2pi = std::log(2.0 * std::numbers::pi);
  EXPECT_NEAR(g::logpdf(MultivariateGaussian::standard(1), Vector::Zero(1)), -0.5 * log2pi, 1e-15);
  EXPECT_NEAR(g::logpdf(MultivariateGaussian::standard(2), Vector::Zero(2)), -log2pi, 1e-15);
}

TEST(Logpdf, MatchesDenseInverseEvaluation) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const auto gd = random_gaussian(4, rng);
    const Vector x = rng.normal_vector(4);
    const double expected = oracle::logpdf_dense(gd.mean(), gd.covariance(), x);
    EXPECT_NEAR(g::logpdf(gd, x), expected, 1e-10);
  }
}

TEST(Logpdf, RowsAgreeWithSingleEvaluation) {
  Rng rng(22);
  const auto gd = random_gaussian(3, rng);
  const Matrix xs = rng.normal_matrix(7, 3);
  const Vector rows = g::logpdf_rows(gd, xs);
  for (Index t = 0; t < 7; ++t) EXPECT_NEAR(rows(t), g::logpdf(gd, xs.row(t).transpose()), 1e-12);
}

TEST(Logpdf, DimensionMismatchThrows) {
  EXPECT_THROW(g::logpdf(MultivariateGaussian::standard(2), Vector::Zero(3)), mild::DimensionMismatch);
}

TEST(Logpdf, IntegratesToOneIn1d) {
  Matrix c(1, 1);
  c << 0.3;
  Vector mu(1);
  mu << 0.7;
  const auto gd = MultivariateGaussian::from_covariance(mu, c);
  double total = 0.0;
  const double h = 1e-3;
  for (double x = -8.0; x < 9.0; x += h) total += std::exp(g::logpdf(gd, Vector::Constant(1, x))) * h;
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(Logpdf, AgreesWithDenseForModeratelyIllConditioned) {
  Rng rng(23);
  const Index n = 5;
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(oracle::Dense(rng.normal_matrix(n, n)));
  const Eigen::MatrixXd q = qr.householderQ();
  Eigen::VectorXd ev(n);
  for (Index i = 0; i < n; ++i) ev(i) = std::pow(10.0, 6.0 * static_cast<double>(i) / (n - 1) - 3.0);
  Eigen::MatrixXd cov = q * ev.asDiagonal() * q.transpose();
  cov = 0.5 * (cov + cov.transpose()).eval();
  const Vector mu = rng.normal_vector(n);
  const auto gd = MultivariateGaussian::from_covariance(mu, cov);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = mu + 0.01 * rng.normal_vector(n);
    const double dense = oracle::logpdf_dense(mu, cov, x);
    EXPECT_NEAR(g::logpdf(gd, x), dense, 1e-10 * std::max(1.0, std::abs(dense)));
  }
}

TEST(Marginal, IsotropicKeepsVariance) {
  const auto gd = MultivariateGaussian::from_covariance(Vector::Zero(4), 2.5 * Matrix::Identity(4, 4));
  const std::vector<Index> dims{0, 1};
  const auto m = g::marginal(gd, dims);
  EXPECT_EQ(m.dim(), 2);
  EXPECT_LT(max_abs(m.covariance() - 2.5 * Matrix::Identity(2, 2)), 1e-14);
}

TEST(Marginal, AllDimsIsIdentity) {
  Rng rng(24);
  const auto gd = random_gaussian(4, rng);
  const std::vector<Index> dims{0, 1, 2, 3};
  const auto m = g::marginal(gd, dims);
  EXPECT_EQ(m.mean(), gd.mean());
  EXPECT_LT(max_abs(m.covariance() - gd.covariance()), 1e-14);
}

TEST(Marginal, PicksJointEntries) {
  Rng rng(25);
  const auto gd = random_gaussian(4, rng);
  const Matrix s = gd.covariance();
  const std::vector<Index> dims{1, 3};
  const auto m = g::marginal(gd, dims);
  const Matrix c = m.covariance();
  EXPECT_NEAR(c(0, 0), s(1, 1), 1e-14);
  EXPECT_NEAR(c(0, 1), s(1, 3), 1e-14);
  EXPECT_NEAR(c(1, 1), s(3, 3), 1e-14);
  EXPECT_EQ(m.mean()(0), gd.mean()(1));
  EXPECT_EQ(m.mean()(1), gd.mean()(3));
}

TEST(Marginal, MarginalOfMarginalIsDirectMarginal) {
  Rng rng(26);
  const auto gd = random_gaussian(5, rng);
  const std::vector<Index> outer{4, 1, 2};
  const std::vector<Index> inner{2, 0};
  const std::vector<Index> direct{2, 4};
  const auto twice = g::marginal(g::marginal(gd, outer), inner);
  const auto once = g::marginal(gd, direct);
  EXPECT_LT(max_abs(twice.covariance() - once.covariance()), 1e-13);
  EXPECT_EQ(twice.mean(), once.mean());
}

TEST(Marginal, OutOfRangeThrows) {
  const std::vector<Index> dims{0, 5};
  EXPECT_THROW(g::marginal(MultivariateGaussian::standard(3), dims), mild::DimensionMismatch);
}

TEST(Condition, IndependentBlocksReturnSecondBlock) {
  Matrix cov = Matrix::Zero(4, 4);
  cov.topLeftCorner(2, 2) << 2.0, 0.3, 0.3, 1.0;
  cov.bottomRightCorner(2, 2) << 1.5, -0.2, -0.2, 0.7;
  Vector mu(4);
  mu << 1, 2, 3, 4;
  const auto gd = MultivariateGaussian::from_covariance(mu, cov);
  Vector obs(2);
  obs << -5.0, 9.0;
  const auto c = g::condition(gd, BlockSplit::contiguous(2, 2), obs);
  EXPECT_LT(max_abs(c.mean() - mu.tail(2)), 1e-14);
  EXPECT_LT(max_abs(c.covariance() - cov.bottomRightCorner(2, 2)), 1e-14);
}

TEST(Condition, Bivariate) {
  Matrix cov(2, 2);
  cov << 1.0, 0.5, 0.5, 1.0;
  const auto gd = MultivariateGaussian::from_covariance(Vector::Zero(2), cov);
  const auto c = g::condition(gd, BlockSplit::contiguous(1, 1), Vector::Constant(1, 2.0));
  EXPECT_NEAR(c.mean()(0), 1.0, 1e-15);
  EXPECT_NEAR(c.covariance()(0, 0), 0.75, 1e-15);
}

TEST(Condition, MatchesDenseInverseOracle) {
  Rng rng(27);
  for (int trial = 0; trial < 200; ++trial) {
    const auto gd = random_gaussian(6, rng);
    BlockSplit split = BlockSplit::contiguous(3, 3);
    const Vector obs = rng.normal_vector(3);
    const auto c = g::condition(gd, split, obs);
    const auto o = oracle::condition_dense(gd.mean(), gd.covariance(), split.first, split.second, obs);
    EXPECT_LT(max_abs(c.mean() - o.mean), 1e-9);
    EXPECT_LT(max_abs(c.covariance() - o.covariance), 1e-9);
  }
}

TEST(Condition, CovarianceIndependentOfObservation) {
  Rng rng(28);
  const auto gd = random_gaussian(5, rng);
  BlockSplit split;
  split.first = {4, 0};
  split.second = {1, 2, 3};
  const auto a = g::condition(gd, split, rng.normal_vector(2));
  const auto b = g::condition(gd, split, rng.normal_vector(2));
  EXPECT_EQ(a.chol(), b.chol());
}

TEST(Condition, OutputCovarianceIsSpd) {
  Rng rng(29);
  for (int trial = 0; trial < 300; ++trial) {
    const Index d = 2 + static_cast<Index>(rng.below(9));
    const auto gd = random_gaussian(d, rng);
    auto [a, b] = oracle::random_split(d, rng);
    BlockSplit split{a, b};
    const auto c = g::condition(gd, split, rng.normal_vector(static_cast<Index>(a.size())));
    EXPECT_NO_THROW(mild::numkit::cholesky(c.covariance()));
    EXPECT_GT(c.chol().diagonal().minCoeff(), 0.0);
  }
}

TEST(Condition, CommutesWithPermutation) {
  Rng rng(30);
  const Index d = 5;
  const auto gd = random_gaussian(d, rng);
  const std::vector<Index> perm{3, 0, 4, 1, 2};  // new dim i is old dim perm[i]
  Vector pm(d);
  Matrix pc(d, d);
  const Matrix cov = gd.covariance();
  for (Index i = 0; i < d; ++i) {
    pm(i) = gd.mean()(perm[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < d; ++j) pc(i, j) = cov(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  const auto permuted = MultivariateGaussian::from_covariance(pm, pc);
  // Old split {0, 3} | {1, 2, 4} maps to new indices via the inverse permutation.
  BlockSplit old_split{{0, 3}, {1, 2, 4}};
  std::vector<Index> inv(static_cast<std::size_t>(d));
  for (Index i = 0; i < d; ++i) inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;
  BlockSplit new_split;
  for (Index i : old_split.first) new_split.first.push_back(inv[static_cast<std::size_t>(i)]);
  for (Index i : old_split.second) new_split.second.push_back(inv[static_cast<std::size_t>(i)]);
  const Vector obs = rng.normal_vector(2);
  const auto a = g::condition(gd, old_split, obs);
  const auto b = g::condition(permuted, new_split, obs);
  EXPECT_LT(max_abs(a.mean() - b.mean()), 1e-12);
  EXPECT_LT(max_abs(a.covariance() - b.covariance()), 1e-12);
  const auto ma = g::marginal(gd, old_split.second);
  const auto mb = g::marginal(permuted, new_split.second);
  EXPECT_LT(max_abs(ma.covariance() - mb.covariance()), 1e-14);
}

TEST(Condition, SingularObservedBlockThrows) {
  // Observed block is numerically rank one: its second pivot underflows.
  Matrix l = Matrix::Zero(3, 3);
  l << 1, 0, 0, 1, 1e-200, 0, 0.5, 0.2, 1;
  const MultivariateGaussian gd(Vector::Zero(3), l);
  EXPECT_THROW(g::condition(gd, BlockSplit::contiguous(2, 1), Vector::Zero(2)), mild::SingularBlock);
}

TEST(Condition, WrongObservationSizeThrows) {
  EXPECT_THROW(g::condition(MultivariateGaussian::standard(4), BlockSplit::contiguous(2, 2),
                            Vector::Zero(3)),
               mild::DimensionMismatch);
}

TEST(KlDivergence, SelfIsZero) {
  Rng rng(31);
  const auto q = random_gaussian(4, rng);
  EXPECT_NEAR(g::kl_divergence(q, q), 0.0, 1e-12);
}

TEST(KlDivergence, IsotropicClosedForm) {
  const auto q = MultivariateGaussian::standard(5);
  const auto p = MultivariateGaussian::from_covariance(Vector::Zero(5), 2.0 * Matrix::Identity(5, 5));
  EXPECT_NEAR(g::kl_divergence(q, p), 2.5 * (std::log(2.0) - 0.5), 1e-12);
  EXPECT_NEAR(g::kl_divergence(q, p), 0.4829, 1e-4);
}

TEST(KlDivergence, MatchesDenseFormula) {
  Rng rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const auto q = random_gaussian(4, rng);
    const auto p = random_gaussian(4, rng);
    const Eigen::MatrixXd sq = q.covariance();
    const Eigen::MatrixXd sp = p.covariance();
    const Eigen::MatrixXd spi = sp.inverse();
    const Eigen::VectorXd dm = p.mean() - q.mean();
    const double expected =
        0.5 * ((spi * sq).trace() - 4.0 + dm.dot(spi * dm) + std::log(sp.determinant() / sq.determinant()));
    EXPECT_NEAR(g::kl_divergence(q, p), expected, 1e-9);
    EXPECT_GE(g::kl_divergence(q, p), -1e-12);
  }
}

TEST(KlDivergence, MatchesMonteCarlo) {
  Rng rng(33);
  const auto q = random_gaussian(4, rng);
  const auto p = random_gaussian(4, rng);
  const int n = 1000000;
  const Matrix lq = q.chol();
  double sum = 0.0;
  double sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vector z = q.mean() + lq * rng.normal_vector(4);
    const double v = g::logpdf(q, z) - g::logpdf(p, z);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean - g::kl_divergence(q, p)), 3.0 * se);
}

TEST(KlDivergence, NonNegativeOverRandomPairs) {
  Rng rng(34);
  for (int trial = 0; trial < 500; ++trial) {
    const Index d = 1 + static_cast<Index>(rng.below(6));
    EXPECT_GE(g::kl_divergence(random_gaussian(d, rng), random_gaussian(d, rng)), -1e-12);
  }
}

TEST(KlDivergence, DimensionMismatchThrows) {
  EXPECT_THROW(g::kl_divergence(MultivariateGaussian::standard(2), MultivariateGaussian::standard(3)),
               mild::DimensionMismatch);
}

TEST(BlockSplit, ValidateRejectsOverlapAndGaps) {
  BlockSplit overlap{{0, 1}, {1, 2}};
  EXPECT_THROW(overlap.validate(4), mild::DimensionMismatch);
  BlockSplit gap{{0}, {2}};
  EXPECT_THROW(gap.validate(2), mild::DimensionMismatch);
  EXPECT_NO_THROW(BlockSplit::contiguous(2, 3).validate(5));
}
