#include "mild/numkit.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "mild/errors.hpp"

namespace mild::numkit {

namespace {

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw DimensionMismatch(std::string(what) + ": matrix is " + std::to_string(m.rows()) +
                            "x" + std::to_string(m.cols()) + ", expected square");
  }
}

}  // namespace

Matrix cholesky(const Matrix& m) {
  require_square(m, "cholesky");
  const Index n = m.rows();
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < i; ++j) {
      if (std::abs(m(i, j) - m(j, i)) > 1e-9 * scale) {
        throw NotPositiveDefinite("cholesky: matrix is not symmetric");
      }
    }
  }

  Matrix l = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    double pivot = m(j, j);
    for (Index k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (!(pivot > 0.0)) {
      throw NotPositiveDefinite("cholesky: non-positive pivot " + std::to_string(pivot) +
                                " at index " + std::to_string(j));
    }
    const double d = std::sqrt(pivot);
    l(j, j) = d;
    for (Index i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / d;
    }
  }
  return l;
}

double default_jitter(const Matrix& m) {
  require_square(m, "default_jitter");
  if (m.rows() == 0) return 1e-8;
  const double mean_diag = m.diagonal().cwiseAbs().mean();
  return std::max(1e-6 * mean_diag, 1e-8);
}

Matrix regularize_spd(const Matrix& m, double eps) {
  require_square(m, "regularize_spd");
  Matrix out = m;
  out.diagonal().array() += eps;
  return out;
}

Matrix cholesky_repaired(const Matrix& m) {
  try {
    return cholesky(m);
  } catch (const NotPositiveDefinite&) {
    return cholesky(regularize_spd(m, default_jitter(m)));
  }
}

Matrix solve_lower(const Matrix& l, const Matrix& b) {
  require_square(l, "solve_lower");
  if (b.rows() != l.rows()) throw DimensionMismatch("solve_lower: rhs row count mismatch");
  const Index n = l.rows();
  Matrix x = b;
  for (Index i = 0; i < n; ++i) {
    if (l(i, i) == 0.0) throw SingularMatrix("solve_lower: zero diagonal entry");
    for (Index k = 0; k < i; ++k) x.row(i) -= l(i, k) * x.row(k);
    x.row(i) /= l(i, i);
  }
  return x;
}

Vector solve_lower(const Matrix& l, const Vector& b) {
  require_square(l, "solve_lower");
  if (b.size() != l.rows()) throw DimensionMismatch("solve_lower: rhs size mismatch");
  const Index n = l.rows();
  Vector x = b;
  for (Index i = 0; i < n; ++i) {
    if (l(i, i) == 0.0) throw SingularMatrix("solve_lower: zero diagonal entry");
    double s = x(i);
    for (Index k = 0; k < i; ++k) s -= l(i, k) * x(k);
    x(i) = s / l(i, i);
  }
  return x;
}

Matrix solve_lower_transposed(const Matrix& l, const Matrix& b) {
  require_square(l, "solve_lower_transposed");
  if (b.rows() != l.rows()) {
    throw DimensionMismatch("solve_lower_transposed: rhs row count mismatch");
  }
  const Index n = l.rows();
  Matrix x = b;
  for (Index i = n - 1; i >= 0; --i) {
    if (l(i, i) == 0.0) throw SingularMatrix("solve_lower_transposed: zero diagonal entry");
    for (Index k = i + 1; k < n; ++k) x.row(i) -= l(k, i) * x.row(k);
    x.row(i) /= l(i, i);
  }
  return x;
}

Vector solve_lower_transposed(const Matrix& l, const Vector& b) {
  require_square(l, "solve_lower_transposed");
  if (b.size() != l.rows()) throw DimensionMismatch("solve_lower_transposed: rhs size mismatch");
  const Index n = l.rows();
  Vector x = b;
  for (Index i = n - 1; i >= 0; --i) {
    if (l(i, i) == 0.0) throw SingularMatrix("solve_lower_transposed: zero diagonal entry");
    double s = x(i);
    for (Index k = i + 1; k < n; ++k) s -= l(k, i) * x(k);
    x(i) = s / l(i, i);
  }
  return x;
}

double log_diag_sum(const Matrix& l) {
  double s = 0.0;
  for (Index i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
  return s;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r = engine_();
  while (r >= limit) r = engine_();
  return r % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Marsaglia polar method.
  double u = 0.0;
  double v = 0.0;
  double s = 0.0;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

Vector Rng::normal_vector(Index n) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = normal();
  return v;
}

Matrix Rng::normal_matrix(Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = normal();
  }
  return m;
}

Rng Rng::split() {
  // SplitMix64 finalizer decorrelates the child seed from the parent stream.
  std::uint64_t z = engine_() + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return Rng(z ^ (z >> 31));
}

}  // namespace mild::numkit
