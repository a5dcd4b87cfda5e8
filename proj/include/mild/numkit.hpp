#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace mild::numkit {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Lower Cholesky factor L with L * L^T == m.
///
/// Throws NotPositiveDefinite if a pivot is <= 0 and DimensionMismatch if m is
/// not square. Symmetry is checked against a relative tolerance of 1e-9.
Matrix cholesky(const Matrix& m);

/// Scale-aware jitter: 1e-6 times the mean absolute diagonal, floored at 1e-8.
double default_jitter(const Matrix& m);

/// Returns m + eps * I.
Matrix regularize_spd(const Matrix& m, double eps);

/// Cholesky with a single repair pass using default_jitter when the first
/// attempt fails.
Matrix cholesky_repaired(const Matrix& m);

/// Solves l * x = b for lower-triangular l. Throws SingularMatrix on a zero
/// diagonal entry.
Matrix solve_lower(const Matrix& l, const Matrix& b);
Vector solve_lower(const Matrix& l, const Vector& b);

/// Solves l^T * x = b for lower-triangular l.
Matrix solve_lower_transposed(const Matrix& l, const Matrix& b);
Vector solve_lower_transposed(const Matrix& l, const Vector& b);

/// Sum of log diagonal entries; for a Cholesky factor this is 0.5 * log det.
double log_diag_sum(const Matrix& l);

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);

/// Seeded random source. Uniform and normal draws are derived from the raw
/// 64-bit engine output, so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  Vector normal_vector(Index n);
  Matrix normal_matrix(Index rows, Index cols);

  /// Independent child stream derived from this one.
  Rng split();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mild::numkit
